//! Dense linear algebra used by the estimators: a one-sided Jacobi SVD and a
//! small linear solver for the alternating least squares normal equations.
//!
//! The SVD rotates columns of the factor with the smaller column count, so the
//! cost is driven by the Gram dimension. It is deterministic, which keeps
//! every estimator reproducible under a fixed seed.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

const JACOBI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular linear system (pivot {0:.3e})")]
    SingularSystem(f64),
}

/// Singular value decomposition `A = U diag(s) Vᵀ` with singular values in
/// descending order. `U` is m×k and `V` is n×k with `k = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl Svd {
    /// Rank-`r` reconstruction `U_r diag(s_r) V_rᵀ`.
    pub fn truncated(&self, rank: usize) -> Array2<f64> {
        let r = rank.min(self.s.len());
        let ur = self.u.slice(ndarray::s![.., ..r]);
        let vr = self.v.slice(ndarray::s![.., ..r]);
        let mut scaled = ur.to_owned();
        for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
            col *= self.s[j];
        }
        scaled.dot(&vr.t())
    }

    /// Factor pair `(U_r diag(√s_r), V_r diag(√s_r))` for a rank-`r` warm start.
    pub fn split_factors(&self, rank: usize) -> (Array2<f64>, Array2<f64>) {
        let r = rank.min(self.s.len());
        let mut left = self.u.slice(ndarray::s![.., ..r]).to_owned();
        let mut right = self.v.slice(ndarray::s![.., ..r]).to_owned();
        for j in 0..r {
            let root = self.s[j].max(0.0).sqrt();
            left.column_mut(j).mapv_inplace(|x| x * root);
            right.column_mut(j).mapv_inplace(|x| x * root);
        }
        (left, right)
    }
}

/// One-sided Jacobi SVD.
pub fn svd(a: ArrayView2<'_, f64>) -> Svd {
    let (m, n) = a.dim();
    if n > m {
        let t = svd(a.t());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut work = a.to_owned();
    let mut v = Array2::<f64>::eye(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let col_p = work.column(p);
                let col_q = work.column(q);
                let alpha: f64 = col_p.dot(&col_p);
                let beta: f64 = col_q.dot(&col_q);
                let gamma: f64 = col_p.dot(&col_q);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = work[[i, p]];
                    let wq = work[[i, q]];
                    work[[i, p]] = c * wp - s * wq;
                    work[[i, q]] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| work.column(j).dot(&work.column(j)).sqrt()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut u = Array2::<f64>::zeros((m, n));
    let mut s = Array1::<f64>::zeros(n);
    let mut vv = Array2::<f64>::zeros((n, n));
    for (out, &j) in order.iter().enumerate() {
        s[out] = norms[j];
        if norms[j] > 0.0 {
            let col = work.column(j).mapv(|x| x / norms[j]);
            u.column_mut(out).assign(&col);
        }
        vv.column_mut(out).assign(&v.column(j));
    }
    Svd { u, s, v: vv }
}

/// Singular values only, descending.
pub fn singular_values(a: ArrayView2<'_, f64>) -> Vec<f64> {
    svd(a).s.to_vec()
}

/// Solves the symmetric system `A x = b` by Gaussian elimination with partial
/// pivoting. `A` is the small normal-equation matrix, r×r.
pub fn solve_symmetric(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.len(), n);
    let mut aug = Array2::<f64>::zeros((n, n + 1));
    aug.slice_mut(ndarray::s![.., ..n]).assign(a);
    aug.column_mut(n).assign(b);

    for col in 0..n {
        let mut pivot_row = col;
        for row in (col + 1)..n {
            if aug[[row, col]].abs() > aug[[pivot_row, col]].abs() {
                pivot_row = row;
            }
        }
        let pivot = aug[[pivot_row, col]];
        if pivot.abs() < 1e-12 {
            return Err(LinalgError::SingularSystem(pivot.abs()));
        }
        if pivot_row != col {
            for k in col..=n {
                aug.swap([col, k], [pivot_row, k]);
            }
        }
        for row in (col + 1)..n {
            let factor = aug[[row, col]] / aug[[col, col]];
            if factor != 0.0 {
                for k in col..=n {
                    let v = aug[[col, k]];
                    aug[[row, k]] -= factor * v;
                }
            }
        }
    }

    let mut x = Array1::<f64>::zeros(n);
    for row in (0..n).rev() {
        let mut acc = aug[[row, n]];
        for k in (row + 1)..n {
            acc -= aug[[row, k]] * x[k];
        }
        x[row] = acc / aug[[row, row]];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Power-iteration estimate of the largest singular value, used as an
    /// independent cross-check on the Jacobi route.
    fn top_singular_value_power(a: &Array2<f64>) -> f64 {
        let n = a.ncols();
        let mut x = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
        for _ in 0..2000 {
            let y = a.t().dot(&a.dot(&x));
            let norm = y.dot(&y).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            x = y / norm;
        }
        a.dot(&x).dot(&a.dot(&x)).sqrt()
    }

    #[test]
    fn svd_reconstructs_matrix() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 10.0], [0.5, -1.0, 2.0]];
        let d = svd(a.view());
        let recon = d.truncated(3);
        for (x, y) in a.iter().zip(recon.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn svd_wide_matrix() {
        let a = array![[1.0, 0.0, 2.0, -1.0], [3.0, 1.0, 0.0, 0.5]];
        let d = svd(a.view());
        let recon = d.truncated(2);
        for (x, y) in a.iter().zip(recon.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(d.s[0] >= d.s[1]);
    }

    #[test]
    fn singular_values_match_power_iteration() {
        let a = array![[0.9, 0.1, 0.4], [0.2, 0.8, 0.3], [0.5, 0.5, 0.7], [0.1, 0.2, 0.9]];
        let jacobi = singular_values(a.view());
        let power = top_singular_value_power(&a);
        assert!((jacobi[0] - power).abs() < 1e-6, "{} vs {}", jacobi[0], power);
    }

    #[test]
    fn singular_values_match_characteristic_polynomial_3x3() {
        // Eigenvalues of AᵀA for a hand matrix, found by solving the cubic
        // characteristic polynomial with Newton bisection.
        let a = array![[1.0, 2.0, 0.0], [0.0, 1.0, 1.0], [2.0, 0.0, 1.0]];
        let g = a.t().dot(&a);
        // det(G - λI) as a closed-form cubic.
        let (g11, g12, g13) = (g[[0, 0]], g[[0, 1]], g[[0, 2]]);
        let (g22, g23, g33) = (g[[1, 1]], g[[1, 2]], g[[2, 2]]);
        let c2 = -(g11 + g22 + g33);
        let c1 = g11 * g22 + g11 * g33 + g22 * g33 - g12 * g12 - g13 * g13 - g23 * g23;
        let c0 = -(g11 * (g22 * g33 - g23 * g23) - g12 * (g12 * g33 - g23 * g13)
            + g13 * (g12 * g23 - g22 * g13));
        let p = |l: f64| ((l + c2) * l + c1) * l + c0;
        let mut roots = Vec::new();
        let lo = 0.0f64;
        let hi = 20.0f64;
        let step = 1e-4;
        let mut prev = p(lo);
        let mut x = lo + step;
        while x <= hi {
            let cur = p(x);
            if prev == 0.0 || prev.signum() != cur.signum() {
                let (mut a0, mut b0) = (x - step, x);
                for _ in 0..200 {
                    let mid = 0.5 * (a0 + b0);
                    if p(a0).signum() == p(mid).signum() {
                        a0 = mid;
                    } else {
                        b0 = mid;
                    }
                }
                roots.push(0.5 * (a0 + b0));
            }
            prev = cur;
            x += step;
        }
        assert_eq!(roots.len(), 3);
        roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sv = singular_values(a.view());
        for (got, root) in sv.iter().zip(roots.iter()) {
            assert!((got - root.sqrt()).abs() < 1e-8, "{got} vs {}", root.sqrt());
        }
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let x_true = array![1.0, -2.0];
        let b = a.dot(&x_true);
        let x = solve_symmetric(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn solve_flags_singular_system() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![1.0, 2.0];
        assert!(solve_symmetric(&a, &b).is_err());
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let a = Array2::<f64>::zeros((3, 2));
        let sv = singular_values(a.view());
        assert!(sv.iter().all(|&s| s == 0.0));
    }
}
