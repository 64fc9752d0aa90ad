//! Matrix estimation: hard-rank truncated SVD with propensity inflation
//! (SVT), regularized alternating least squares over observed cells (ALS),
//! and the SVT-warm-started ALS hybrid.
//!
//! SVT here means hard rank truncation of the zero-filled observation matrix
//! scaled by 1/ρ̂ (ρ̂ = observed fraction), not iterative soft-thresholding.
//! Values are clamped to [0, 1] only at the boundary; the pre-clamp matrix is
//! kept for rank checks and warm starts.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::ObservationMatrix;
use crate::linalg::{self, LinalgError};
use crate::rng;

#[derive(Debug, Error)]
pub enum MatestError {
    #[error("matrix has no observed cells")]
    EmptyMatrix,
    #[error("rank {rank} out of bounds for {m}x{n} matrix")]
    RankOutOfBounds { rank: usize, m: usize, n: usize },
    #[error("tolerance must be positive")]
    InvalidTolerance,
    #[error("normal equations singular with lambda = 0: {0}")]
    Degenerate(#[from] LinalgError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    Svt,
    Als,
    SvtAls,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Svt => write!(f, "SVT"),
            Algorithm::Als => write!(f, "ALS"),
            Algorithm::SvtAls => write!(f, "SVT+ALS"),
        }
    }
}

/// Dense estimate of the latent rate matrix.
#[derive(Debug, Clone)]
pub struct EstimateMatrix {
    values: Array2<f64>,
    pre_clamp: Array2<f64>,
    pub rank_used: usize,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub final_objective: f64,
    pub singular_values: Vec<f64>,
    /// Objective value at init and after every ALS half-step (empty for SVT).
    pub objective_history: Vec<f64>,
}

impl EstimateMatrix {
    /// Clamped values in [0, 1].
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Estimate before boundary clamping.
    pub fn pre_clamp(&self) -> &Array2<f64> {
        &self.pre_clamp
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MatestError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in self.values.rows() {
            wtr.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(
        &self,
        writer: W,
        lambda: Option<f64>,
    ) -> Result<(), MatestError> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            algorithm: String,
            rank: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            lambda: Option<f64>,
            iterations: usize,
            final_objective: f64,
            singular_values: &'a [f64],
        }
        serde_json::to_writer_pretty(
            writer,
            &Sidecar {
                algorithm: self.algorithm.to_string(),
                rank: self.rank_used,
                lambda,
                iterations: self.iterations,
                final_objective: self.final_objective,
                singular_values: &self.singular_values,
            },
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlsConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    pub seed: u64,
    /// Explicit starting factors (user m×r, ad n×r); overrides the seeded init.
    pub init: Option<(Array2<f64>, Array2<f64>)>,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { rank: 2, lambda: 0.01, max_iters: 100, tol: 1e-9, seed: 0, init: None }
    }
}

fn check_rank(x: &ObservationMatrix, rank: usize) -> Result<(), MatestError> {
    let (m, n) = (x.nrows(), x.ncols());
    if rank < 1 || rank > m.min(n) {
        return Err(MatestError::RankOutOfBounds { rank, m, n });
    }
    if x.observed_count() == 0 {
        return Err(MatestError::EmptyMatrix);
    }
    Ok(())
}

/// Rank-truncated SVD of the zero-filled observation matrix, inflated by the
/// inverse observed fraction, then clamped to [0, 1].
pub fn svt(x: &ObservationMatrix, rank: usize) -> Result<EstimateMatrix, MatestError> {
    check_rank(x, rank)?;
    let rho = x.observed_fraction();
    let decomp = linalg::svd(x.zero_filled().view());
    let pre_clamp = decomp.truncated(rank).mapv(|v| v / rho);
    let singular_values: Vec<f64> =
        decomp.s.iter().take(rank).map(|s| s / rho).collect();
    let values = pre_clamp.mapv(|v| v.clamp(0.0, 1.0));
    Ok(EstimateMatrix {
        values,
        pre_clamp,
        rank_used: rank,
        algorithm: Algorithm::Svt,
        iterations: 0,
        final_objective: 0.0,
        singular_values,
        objective_history: Vec::new(),
    })
}

fn objective(
    x: &ObservationMatrix,
    cells: &[(usize, usize)],
    user: &Array2<f64>,
    ad: &Array2<f64>,
    lambda: f64,
) -> f64 {
    let mut j = 0.0;
    for &(i, jj) in cells {
        let pred = user.row(i).dot(&ad.row(jj));
        let resid = x.value(i, jj).unwrap() - pred;
        j += resid * resid;
    }
    let reg: f64 = user.iter().map(|v| v * v).sum::<f64>() + ad.iter().map(|v| v * v).sum::<f64>();
    j + lambda * reg
}

fn solve_side(
    rows: usize,
    rank: usize,
    lambda: f64,
    frozen: &Array2<f64>,
    cells_by_row: &[Vec<(usize, f64)>],
    out: &mut Array2<f64>,
) -> Result<(), MatestError> {
    for i in 0..rows {
        let cells = &cells_by_row[i];
        if cells.is_empty() && lambda > 0.0 {
            // Cold row: regularization drives the factor to zero.
            out.row_mut(i).fill(0.0);
            continue;
        }
        let mut a = Array2::<f64>::zeros((rank, rank));
        let mut b = Array1::<f64>::zeros(rank);
        for &(j, value) in cells {
            let v = frozen.row(j);
            for p in 0..rank {
                b[p] += value * v[p];
                for q in 0..rank {
                    a[[p, q]] += v[p] * v[q];
                }
            }
        }
        for p in 0..rank {
            a[[p, p]] += lambda;
        }
        let solution = linalg::solve_symmetric(&a, &b)?;
        out.row_mut(i).assign(&solution);
    }
    Ok(())
}

fn als_with(
    x: &ObservationMatrix,
    cfg: &AlsConfig,
    algorithm: Algorithm,
) -> Result<EstimateMatrix, MatestError> {
    check_rank(x, cfg.rank)?;
    if !(cfg.tol > 0.0) {
        return Err(MatestError::InvalidTolerance);
    }
    let (m, n, rank) = (x.nrows(), x.ncols(), cfg.rank);
    let cells = x.observed_cells();

    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut by_ad: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j) in &cells {
        let v = x.value(i, j).unwrap();
        by_user[i].push((j, v));
        by_ad[j].push((i, v));
    }

    let (mut user, mut ad) = match &cfg.init {
        Some((u0, v0)) => {
            assert_eq!(u0.dim(), (m, rank), "init user factor shape");
            assert_eq!(v0.dim(), (n, rank), "init ad factor shape");
            (u0.clone(), v0.clone())
        }
        None => {
            let mean =
                cells.iter().map(|&(i, j)| x.value(i, j).unwrap()).sum::<f64>() / cells.len() as f64;
            let scale = (mean.max(1e-6) / rank as f64).sqrt();
            let mut r = rng::stream(cfg.seed, "als-init");
            let mut u = Array2::<f64>::zeros((m, rank));
            let mut v = Array2::<f64>::zeros((n, rank));
            for e in u.iter_mut() {
                *e = r.random_range(0.0..scale.max(1e-6));
            }
            for e in v.iter_mut() {
                *e = r.random_range(0.0..scale.max(1e-6));
            }
            (u, v)
        }
    };

    let mut history = vec![objective(x, &cells, &user, &ad, cfg.lambda)];
    let mut best = (user.clone(), ad.clone(), history[0]);
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let before = *history.last().unwrap();
        solve_side(m, rank, cfg.lambda, &ad, &by_user, &mut user)?;
        history.push(objective(x, &cells, &user, &ad, cfg.lambda));
        solve_side(n, rank, cfg.lambda, &user, &by_ad, &mut ad)?;
        let after = objective(x, &cells, &user, &ad, cfg.lambda);
        history.push(after);
        if after < best.2 {
            best = (user.clone(), ad.clone(), after);
        }
        let denom = before.abs().max(1e-300);
        if (before - after).abs() / denom < cfg.tol {
            break;
        }
    }

    let (user, ad, final_objective) = best;
    let pre_clamp = user.dot(&ad.t());
    let values = pre_clamp.mapv(|v| v.clamp(0.0, 1.0));
    let singular_values = linalg::svd(pre_clamp.view())
        .s
        .iter()
        .take(rank)
        .copied()
        .collect();
    Ok(EstimateMatrix {
        values,
        pre_clamp,
        rank_used: rank,
        algorithm,
        iterations,
        final_objective,
        singular_values,
        objective_history: history,
    })
}

/// Alternating regularized least squares over observed cells.
pub fn als(x: &ObservationMatrix, cfg: &AlsConfig) -> Result<EstimateMatrix, MatestError> {
    als_with(x, cfg, Algorithm::Als)
}

/// Runs SVT at the configured rank and uses its factors (singular values
/// split by square root) as the ALS starting point.
pub fn svt_then_als(x: &ObservationMatrix, cfg: &AlsConfig) -> Result<EstimateMatrix, MatestError> {
    check_rank(x, cfg.rank)?;
    let rho = x.observed_fraction();
    let decomp = linalg::svd(x.zero_filled().view());
    // Split the 1/rho inflation evenly between the factor pair.
    let (mut left, mut right) = decomp.split_factors(cfg.rank);
    let inflate = (1.0 / rho).sqrt();
    left.mapv_inplace(|v| v * inflate);
    right.mapv_inplace(|v| v * inflate);
    let warmed = AlsConfig { init: Some((left, right)), ..cfg.clone() };
    als_with(x, &warmed, Algorithm::SvtAls)
}
