//! Per-pair data valuation: the absolute deviation of a user's estimated
//! rate from the category mean, its per-category normalized summary, and the
//! pre/post-estimation mean and variance diagnostics.
//!
//! Variance estimators use population normalization (divide by count).
//! Normalized quantities with a zero pre-estimation mean are reported as
//! explicitly absent, never NaN.

use std::io::Write;

use ndarray::Array2;
use thiserror::Error;

use crate::ingest::ObservationMatrix;
use crate::matest::EstimateMatrix;
use crate::synth::LatentModel;

#[derive(Debug, Error)]
pub enum VodError {
    #[error("estimate is empty")]
    EmptyEstimate,
    #[error("shape mismatch: observations {obs:?} vs estimate {est:?}")]
    ShapeMismatch { obs: (usize, usize), est: (usize, usize) },
    #[error("column {0} has no observations")]
    EmptyColumn(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Per-pair and per-category valuation of user data.
#[derive(Debug, Clone)]
pub struct VodReport {
    /// |estimate(i,j) − column mean(j)| for every pair.
    pub per_pair: Array2<f64>,
    /// Average per-pair value of a category divided by its pre-estimation
    /// mean rate; `None` where that mean is zero.
    pub per_category_norm: Vec<Option<f64>>,
    /// Column means of the estimate.
    pub column_means: Vec<f64>,
}

/// Pre/post-estimation mean and variance per category, with normalized
/// differences.
#[derive(Debug, Clone)]
pub struct SignalNoiseReport {
    pub mu_pre: Vec<f64>,
    pub mu_post: Vec<f64>,
    pub var_pre: Vec<f64>,
    pub var_post: Vec<f64>,
    /// |mu_pre − mu_post| / mu_pre, absent when mu_pre is zero.
    pub mu_diff: Vec<Option<f64>>,
    /// |var_pre − var_post| / mu_pre², absent when mu_pre is zero.
    pub var_diff: Vec<Option<f64>>,
}

/// Five-number summary of a column of the estimate.
#[derive(Debug, Clone)]
pub struct ColumnQuantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Mean of observed cells per column; error when a column has none.
fn mu_pre(x: &ObservationMatrix) -> Result<Vec<f64>, VodError> {
    let mut out = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for i in 0..x.nrows() {
            if let Some(v) = x.value(i, j) {
                sum += v;
                cnt += 1;
            }
        }
        if cnt == 0 {
            return Err(VodError::EmptyColumn(j));
        }
        out.push(sum / cnt as f64);
    }
    Ok(out)
}

/// Estimated per-pair value of user data, with the per-category normalized
/// average. The observation matrix supplies each category's pre-estimation
/// mean used for normalization.
pub fn vod(estimate: &EstimateMatrix, x: &ObservationMatrix) -> Result<VodReport, VodError> {
    let (m, n) = (estimate.nrows(), estimate.ncols());
    if m == 0 || n == 0 {
        return Err(VodError::EmptyEstimate);
    }
    if (x.nrows(), x.ncols()) != (m, n) {
        return Err(VodError::ShapeMismatch { obs: (x.nrows(), x.ncols()), est: (m, n) });
    }
    let pre = mu_pre(x)?;

    let mut column_means = vec![0.0; n];
    for j in 0..n {
        let mut sum = 0.0;
        for i in 0..m {
            sum += estimate.get(i, j);
        }
        column_means[j] = sum / m as f64;
    }
    let mut per_pair = Array2::<f64>::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            per_pair[[i, j]] = (estimate.get(i, j) - column_means[j]).abs();
        }
    }
    let per_category_norm = (0..n)
        .map(|j| {
            if pre[j] == 0.0 {
                None
            } else {
                let avg = (0..m).map(|i| per_pair[[i, j]]).sum::<f64>() / m as f64;
                Some(avg / pre[j])
            }
        })
        .collect();
    Ok(VodReport { per_pair, per_category_norm, column_means })
}

/// Ground-truth per-pair value computed directly from a generator model;
/// only meaningful against synthetic data.
pub fn true_vod(model: &LatentModel) -> Array2<f64> {
    let mean = model.mean_matrix();
    let (m, n) = mean.dim();
    let mut out = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        let col_mean = (0..m).map(|i| mean[[i, j]]).sum::<f64>() / m as f64;
        for i in 0..m {
            out[[i, j]] = (mean[[i, j]] - col_mean).abs();
        }
    }
    out
}

/// Pre/post-estimation mean-variance diagnostics per category.
pub fn signal_noise(
    x: &ObservationMatrix,
    estimate: &EstimateMatrix,
) -> Result<SignalNoiseReport, VodError> {
    let (m, n) = (estimate.nrows(), estimate.ncols());
    if (x.nrows(), x.ncols()) != (m, n) {
        return Err(VodError::ShapeMismatch { obs: (x.nrows(), x.ncols()), est: (m, n) });
    }
    let mu_pre = mu_pre(x)?;

    let mut mu_post = vec![0.0; n];
    let mut var_pre = vec![0.0; n];
    let mut var_post = vec![0.0; n];
    for j in 0..n {
        let mut sum = 0.0;
        for i in 0..m {
            sum += estimate.get(i, j);
        }
        mu_post[j] = sum / m as f64;

        let mut ss = 0.0;
        let mut cnt = 0usize;
        for i in 0..m {
            if let Some(v) = x.value(i, j) {
                let d = v - mu_pre[j];
                ss += d * d;
                cnt += 1;
            }
        }
        var_pre[j] = ss / cnt as f64;

        let mut ssp = 0.0;
        for i in 0..m {
            let d = estimate.get(i, j) - mu_post[j];
            ssp += d * d;
        }
        var_post[j] = ssp / m as f64;
    }
    let mu_diff = (0..n)
        .map(|j| (mu_pre[j] != 0.0).then(|| (mu_pre[j] - mu_post[j]).abs() / mu_pre[j]))
        .collect();
    let var_diff = (0..n)
        .map(|j| {
            (mu_pre[j] != 0.0).then(|| (var_pre[j] - var_post[j]).abs() / (mu_pre[j] * mu_pre[j]))
        })
        .collect();
    Ok(SignalNoiseReport { mu_pre, mu_post, var_pre, var_post, mu_diff, var_diff })
}

/// Five-number summaries of the estimate's columns, for external plotting.
pub fn column_quantiles(estimate: &EstimateMatrix) -> Vec<ColumnQuantiles> {
    let (m, n) = (estimate.nrows(), estimate.ncols());
    (0..n)
        .map(|j| {
            let mut col: Vec<f64> = (0..m).map(|i| estimate.get(i, j)).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let pos = p * (col.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                col[lo] * (1.0 - frac) + col[hi] * frac
            };
            ColumnQuantiles { min: col[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: col[col.len() - 1] }
        })
        .collect()
}

/// One CSV row per category: normalized value, column mean, and quantiles.
pub fn write_report_csv<W: Write>(
    writer: W,
    col_keys: &[String],
    report: &VodReport,
    quantiles: &[ColumnQuantiles],
) -> Result<(), VodError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "ad_category",
        "vod_norm",
        "column_mean",
        "min",
        "q1",
        "median",
        "q3",
        "max",
    ])?;
    for (j, key) in col_keys.iter().enumerate() {
        let norm = report.per_category_norm[j]
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        let q = &quantiles[j];
        wtr.write_record([
            key.as_str(),
            &norm,
            &format!("{}", report.column_means[j]),
            &format!("{}", q.min),
            &format!("{}", q.q1),
            &format!("{}", q.median),
            &format!("{}", q.q3),
            &format!("{}", q.max),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
