//! Estimator evaluation: the coefficient of determination, holdout
//! splitting of observed cells, and the sweep harness that traces estimation
//! quality against fill fraction, data volume, and holdout share.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use thiserror::Error;

use crate::ingest::ObservationMatrix;
use crate::matest::{self, Algorithm, AlsConfig, EstimateMatrix, MatestError};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least two (actual, predicted) pairs")]
    TooFewPairs,
    #[error("actual values have zero variance")]
    ZeroVariance,
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid point {value} infeasible: {reason}")]
    GridInfeasible { value: f64, reason: String },
    #[error(transparent)]
    Matest(#[from] MatestError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coefficient of determination, `1 − SS_res / SS_tot`. Can be negative;
/// never exceeds 1.
pub fn r_squared(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs);
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1) * (p.0 - p.1)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// A train/test partition of the observed cells.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: ObservationMatrix,
    /// Held-out cells as (row, col, observed value).
    pub test_cells: Vec<(usize, usize, f64)>,
    pub fraction: f64,
    pub seed: u64,
}

/// Uniform holdout of `floor(fraction × observed)` cells, minimum one;
/// deterministic under the seed.
pub fn split(x: &ObservationMatrix, fraction: f64, seed: u64) -> Result<HoldoutSplit, EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let mut cells = x.observed_cells();
    let total = cells.len();
    if total < 2 {
        return Err(EvalError::TooFewPairs);
    }
    let take = ((fraction * total as f64).floor() as usize).max(1).min(total - 1);
    let mut r = rng::stream(seed, "holdout-split");
    cells.shuffle(&mut r);
    let held: Vec<(usize, usize)> = cells[..take].to_vec();
    let test_cells = held
        .iter()
        .map(|&(i, j)| (i, j, x.value(i, j).unwrap()))
        .collect();
    Ok(HoldoutSplit { train: x.without_cells(&held), test_cells, fraction, seed })
}

/// Prediction for a cell: the clamped estimate, except rows with no training
/// observations fall back to the estimate's column mean.
pub fn predict(estimate: &EstimateMatrix, train: &ObservationMatrix, i: usize, j: usize) -> f64 {
    let row_cold = (0..train.ncols()).all(|jj| !train.is_observed(i, jj));
    if row_cold {
        let m = estimate.nrows() as f64;
        (0..estimate.nrows()).map(|ii| estimate.get(ii, j)).sum::<f64>() / m
    } else {
        estimate.get(i, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Fraction of matrix cells retained as observed.
    FillFraction,
    /// Total number of exposure records used.
    DataPoints,
    /// Share of observed cells held out for testing.
    HoldoutFraction,
}

impl std::fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepVariable::FillFraction => write!(f, "fill_fraction"),
            SweepVariable::DataPoints => write!(f, "data_points"),
            SweepVariable::HoldoutFraction => write!(f, "holdout_fraction"),
        }
    }
}

/// One (algorithm, grid point) measurement.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub algorithm: Algorithm,
    pub sweep: SweepVariable,
    pub sweep_value: f64,
    pub r2_in: f64,
    pub r2_out: f64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["algorithm", "sweep_variable", "sweep_value", "r2_in", "r2_out", "runtime_secs"])?;
        for row in &self.rows {
            wtr.write_record([
                row.algorithm.to_string(),
                row.sweep.to_string(),
                format!("{}", row.sweep_value),
                format!("{}", row.r2_in),
                format!("{}", row.r2_out),
                format!("{}", row.runtime_secs),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub const DEFAULT_HOLDOUT: f64 = 0.2;

fn estimate(
    x: &ObservationMatrix,
    algorithm: Algorithm,
    cfg: &AlsConfig,
    seed: u64,
) -> Result<EstimateMatrix, MatestError> {
    let local = AlsConfig { seed, ..cfg.clone() };
    match algorithm {
        Algorithm::Svt => matest::svt(x, cfg.rank),
        Algorithm::Als => matest::als(x, &local),
        Algorithm::SvtAls => matest::svt_then_als(x, &local),
    }
}

/// Subsamples the observed cells down to a target observed fraction of the
/// whole matrix.
fn subsample_fill(
    x: &ObservationMatrix,
    target_fill: f64,
    seed: u64,
) -> Result<ObservationMatrix, EvalError> {
    let total_cells = x.nrows() * x.ncols();
    let want = (target_fill * total_cells as f64).round() as usize;
    let mut cells = x.observed_cells();
    if want == 0 || want > cells.len() {
        return Err(EvalError::GridInfeasible {
            value: target_fill,
            reason: format!("{} observed cells cannot supply {want}", cells.len()),
        });
    }
    let mut r = rng::stream(seed, "fill-subsample");
    cells.shuffle(&mut r);
    Ok(x.retain_cells(&cells[..want]))
}

/// Thins the raw exposure records to approximately `target` total exposures,
/// keeping each exposure with equal probability: cell totals are binomially
/// thinned and clicks follow hypergeometrically.
fn subsample_exposures(
    x: &ObservationMatrix,
    target: f64,
    seed: u64,
) -> Result<ObservationMatrix, EvalError> {
    let total = x.total_exposures();
    if !(target >= 1.0) || target > total as f64 {
        return Err(EvalError::GridInfeasible {
            value: target,
            reason: format!("{total} exposures cannot supply {target}"),
        });
    }
    let q = target / total as f64;
    let mut r = rng::stream(seed, "exposure-subsample");
    let (m, n) = (x.nrows(), x.ncols());
    let mut clicks = ndarray::Array2::<u64>::zeros((m, n));
    let mut counts = ndarray::Array2::<u64>::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let t = x.count(i, j);
            if t == 0 {
                continue;
            }
            let kept = Binomial::new(t, q).expect("valid binomial").sample(&mut r);
            if kept == 0 {
                continue;
            }
            let c = x.clicks(i, j);
            let kept_clicks = if c == 0 {
                0
            } else if c == t {
                kept
            } else {
                Hypergeometric::new(t, c, kept).expect("valid hypergeometric").sample(&mut r)
            };
            clicks[[i, j]] = kept_clicks;
            counts[[i, j]] = kept;
        }
    }
    Ok(ObservationMatrix::from_counts(
        x.row_keys().to_vec(),
        x.col_keys().to_vec(),
        clicks,
        counts,
    ))
}

/// Runs one split + estimate + score measurement.
fn measure(
    x: &ObservationMatrix,
    algorithm: Algorithm,
    cfg: &AlsConfig,
    holdout: f64,
    split_seed: u64,
    est_seed: u64,
) -> Result<(f64, f64), EvalError> {
    let parts = split(x, holdout, split_seed)?;
    let est = estimate(&parts.train, algorithm, cfg, est_seed)?;
    let in_pairs: Vec<(f64, f64)> = parts
        .train
        .observed_cells()
        .iter()
        .map(|&(i, j)| (parts.train.value(i, j).unwrap(), est.get(i, j)))
        .collect();
    let out_pairs: Vec<(f64, f64)> = parts
        .test_cells
        .iter()
        .map(|&(i, j, actual)| (actual, predict(&est, &parts.train, i, j)))
        .collect();
    Ok((r_squared(&in_pairs)?, r_squared(&out_pairs)?))
}

/// Sweeps the chosen variable over `grid`, reporting in/out-of-sample
/// performance per algorithm at each grid point. Grid points carry derived
/// seeds, so results do not depend on evaluation order.
pub fn run_sweep(
    x: &ObservationMatrix,
    algorithms: &[Algorithm],
    sweep: SweepVariable,
    grid: &[f64],
    cfg: &AlsConfig,
    seed: u64,
) -> Result<ExperimentResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut result = ExperimentResult::default();
    for (idx, &value) in grid.iter().enumerate() {
        let point_seed = rng::derived_seed(seed, "sweep-point", idx as u64);
        let (input, holdout) = match sweep {
            SweepVariable::FillFraction => {
                (subsample_fill(x, value, point_seed)?, DEFAULT_HOLDOUT)
            }
            SweepVariable::DataPoints => {
                (subsample_exposures(x, value, point_seed)?, DEFAULT_HOLDOUT)
            }
            SweepVariable::HoldoutFraction => (x.clone(), value),
        };
        for &algorithm in algorithms {
            let start = Instant::now();
            let (r2_in, r2_out) =
                measure(&input, algorithm, cfg, holdout, point_seed, point_seed)?;
            result.rows.push(ExperimentRow {
                algorithm,
                sweep,
                sweep_value: value,
                r2_in,
                r2_out,
                runtime_secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_model, sample_observations, SamplingConfig};

    #[test]
    fn perfect_predictions_score_one() {
        let pairs = [(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)];
        assert_eq!(r_squared(&pairs).unwrap(), 1.0);
    }

    #[test]
    fn mean_predictions_score_zero() {
        let pairs = [(0.0, 0.5), (1.0, 0.5)];
        assert!(r_squared(&pairs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn hand_arithmetic_cases() {
        // y=(0,1), yhat=(0.5,0.5): SS_res = 0.5, SS_tot = 0.5 -> 0.0
        assert!(r_squared(&[(0.0, 0.5), (1.0, 0.5)]).unwrap().abs() < 1e-12);
        // y=(0,1,1), yhat=(0,1,0): 1 - 1/(2/3) = -0.5
        let r2 = r_squared(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0)]).unwrap();
        assert!((r2 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(matches!(r_squared(&[(0.5, 0.5)]), Err(EvalError::TooFewPairs)));
        assert!(matches!(
            r_squared(&[(0.5, 0.1), (0.5, 0.9)]),
            Err(EvalError::ZeroVariance)
        ));
    }

    fn sample_matrix(seed: u64) -> ObservationMatrix {
        let model = generate_model(30, 12, 2, None, seed).unwrap();
        sample_observations(&model, &SamplingConfig::new(0.8, 100, seed + 1))
            .unwrap()
            .matrix
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let x = sample_matrix(3);
        let a = split(&x, 0.2, 99).unwrap();
        let b = split(&x, 0.2, 99).unwrap();
        assert_eq!(a.test_cells, b.test_cells);
        let total = x.observed_count();
        assert_eq!(a.train.observed_count() + a.test_cells.len(), total);
        for &(i, j, v) in &a.test_cells {
            assert!(!a.train.is_observed(i, j));
            assert_eq!(x.value(i, j), Some(v));
        }
    }

    #[test]
    fn split_count_follows_floor_rule() {
        let x = sample_matrix(5);
        let observed = x.observed_count();
        let s = split(&x, 0.2, 7).unwrap();
        assert_eq!(s.test_cells.len(), ((0.2 * observed as f64).floor() as usize).max(1));
        // tiny fraction still holds out one cell
        let tiny = split(&x, 1e-9, 7).unwrap();
        assert_eq!(tiny.test_cells.len(), 1);
    }

    #[test]
    fn split_fraction_validated() {
        let x = sample_matrix(6);
        assert!(matches!(split(&x, 0.0, 1), Err(EvalError::InvalidFraction(_))));
        assert!(matches!(split(&x, 1.0, 1), Err(EvalError::InvalidFraction(_))));
    }

    #[test]
    fn exact_split_count_at_thousand_cells() {
        // 1000 observed cells at fraction 0.2 -> exactly 200 test cells.
        let model = generate_model(40, 25, 2, None, 8).unwrap();
        let sample = sample_observations(&model, &SamplingConfig::new(1.0, 10, 9)).unwrap();
        assert_eq!(sample.matrix.observed_count(), 1000);
        let s = split(&sample.matrix, 0.2, 10).unwrap();
        assert_eq!(s.test_cells.len(), 200);
    }

    #[test]
    fn full_rank_svt_in_sample_r2_is_one() {
        // fully observed: rho = 1, truncation at full rank reproduces X
        let model = generate_model(10, 8, 2, None, 12).unwrap();
        let full = sample_observations(&model, &SamplingConfig::new(1.0, 50, 13)).unwrap().matrix;
        let full_est = matest::svt(&full, 8).unwrap();
        let full_pairs: Vec<(f64, f64)> = full
            .observed_cells()
            .iter()
            .map(|&(i, j)| (full.value(i, j).unwrap(), full_est.pre_clamp()[[i, j]]))
            .collect();
        assert!(r_squared(&full_pairs).unwrap() > 1.0 - 1e-8);
    }

    #[test]
    fn single_point_grid_matches_manual_run() {
        let x = sample_matrix(21);
        let cfg = AlsConfig { rank: 2, seed: 0, ..Default::default() };
        let result =
            run_sweep(&x, &[Algorithm::Als], SweepVariable::HoldoutFraction, &[0.25], &cfg, 77)
                .unwrap();
        assert_eq!(result.rows.len(), 1);
        let point_seed = rng::derived_seed(77, "sweep-point", 0);
        let (r2_in, r2_out) =
            measure(&x, Algorithm::Als, &cfg, 0.25, point_seed, point_seed).unwrap();
        assert_eq!(result.rows[0].r2_in, r2_in);
        assert_eq!(result.rows[0].r2_out, r2_out);
    }

    #[test]
    fn sweep_is_deterministic() {
        let x = sample_matrix(31);
        let cfg = AlsConfig { rank: 2, ..Default::default() };
        let grid = [0.3, 0.5, 0.7];
        let a = run_sweep(&x, &[Algorithm::Svt, Algorithm::Als], SweepVariable::FillFraction, &grid, &cfg, 5).unwrap();
        let b = run_sweep(&x, &[Algorithm::Svt, Algorithm::Als], SweepVariable::FillFraction, &grid, &cfg, 5).unwrap();
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(ra.r2_in, rb.r2_in);
            assert_eq!(ra.r2_out, rb.r2_out);
        }
    }

    #[test]
    fn infeasible_grid_point_reported() {
        let x = sample_matrix(41);
        let cfg = AlsConfig::default();
        let r = run_sweep(&x, &[Algorithm::Svt], SweepVariable::FillFraction, &[0.99], &cfg, 1);
        assert!(matches!(r, Err(EvalError::GridInfeasible { .. })));
    }

    #[test]
    fn exposure_thinning_preserves_cell_bounds() {
        let x = sample_matrix(51);
        let thinned = subsample_exposures(&x, x.total_exposures() as f64 / 4.0, 3).unwrap();
        for (i, j) in x.observed_cells() {
            assert!(thinned.count(i, j) <= x.count(i, j));
            assert!(thinned.clicks(i, j) <= x.clicks(i, j));
        }
        let ratio = thinned.total_exposures() as f64 / x.total_exposures() as f64;
        assert!((ratio - 0.25).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn out_of_sample_not_better_than_in_sample_on_average() {
        let mut diffs = Vec::new();
        for trial in 0..20u64 {
            let model = generate_model(40, 12, 2, None, 100 + trial).unwrap();
            let x = sample_observations(&model, &SamplingConfig::new(0.6, 50, 200 + trial))
                .unwrap()
                .matrix;
            let cfg = AlsConfig { rank: 2, ..Default::default() };
            let (r2_in, r2_out) =
                measure(&x, Algorithm::Als, &cfg, 0.2, 300 + trial, 400 + trial).unwrap();
            diffs.push(r2_in - r2_out);
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!(mean >= 0.0, "mean in-out gap {mean}");
    }
}
