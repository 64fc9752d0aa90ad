//! Intent-aware estimation: the order-3 observation tensor is flattened
//! into an m × (n·k) matrix by appending intent slices along the column
//! axis, estimated with the matrix machinery, and unflattened. A per-slice
//! baseline estimates each intent slice independently.
//!
//! Cell (i, j, l) maps to flat column l·n + j (0-based).

use std::io::Write;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::evalx::EvalError;
use crate::ingest::{IntentTensor, ObservationMatrix};
use crate::matest::{self, AlsConfig, MatestError};
use crate::rng;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor has no observed cells")]
    EmptyTensor,
    #[error(transparent)]
    Matest(#[from] MatestError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorMethod {
    Flattened,
    PerSlice,
}

/// Dense estimate of the rate tensor.
#[derive(Debug, Clone)]
pub struct TensorEstimate {
    pub values: Array3<f64>,
    pub method: TensorMethod,
    /// Slices with no observations, filled by the column-mean fallback
    /// (per-slice method only).
    pub cold_slices: Vec<usize>,
}

impl TensorEstimate {
    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[[i, j, l]]
    }

    /// One slice as dense CSV rows.
    pub fn write_slice_csv<W: Write>(&self, slice: usize, writer: W) -> Result<(), TensorError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let (m, n, _) = self.values.dim();
        for i in 0..m {
            wtr.write_record((0..n).map(|j| format!("{}", self.values[[i, j, slice]])))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Flat column index for tensor cell (j, l).
pub fn flat_column(j: usize, l: usize, n: usize) -> usize {
    l * n + j
}

/// Tensor coordinates (j, l) of a flat column.
pub fn tensor_column(flat: usize, n: usize) -> (usize, usize) {
    (flat % n, flat / n)
}

/// Appends the k intent slices along the column axis; missing markers are
/// preserved and the observation count is unchanged.
pub fn flatten(w: &IntentTensor) -> ObservationMatrix {
    let (m, n, k) = w.dims();
    let mut clicks = Array2::<u64>::zeros((m, n * k));
    let mut counts = Array2::<u64>::zeros((m, n * k));
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                let col = flat_column(j, l, n);
                clicks[[i, col]] = w.clicks(i, j, l);
                counts[[i, col]] = w.count(i, j, l);
            }
        }
    }
    let col_keys = (0..n * k)
        .map(|c| {
            let (j, l) = tensor_column(c, n);
            format!("{}~{}", w.intent_keys[l], w.col_keys[j])
        })
        .collect();
    ObservationMatrix::from_counts(w.row_keys.clone(), col_keys, clicks, counts)
}

/// Reshapes a dense m × (n·k) matrix back into the m×n×k tensor.
pub fn unflatten_dense(flat: &Array2<f64>, n: usize, k: usize) -> Array3<f64> {
    let m = flat.nrows();
    assert_eq!(flat.ncols(), n * k, "flat width must be n*k");
    let mut out = Array3::<f64>::zeros((m, n, k));
    for i in 0..m {
        for c in 0..n * k {
            let (j, l) = tensor_column(c, n);
            out[[i, j, l]] = flat[[i, c]];
        }
    }
    out
}

/// Runs matrix estimation on the flattened tensor and unflattens the result.
pub fn estimate_flattened(w: &IntentTensor, cfg: &AlsConfig) -> Result<TensorEstimate, TensorError> {
    let (_, n, k) = w.dims();
    let flat = flatten(w);
    let est = matest::als(&flat, cfg)?;
    Ok(TensorEstimate {
        values: unflatten_dense(est.values(), n, k),
        method: TensorMethod::Flattened,
        cold_slices: Vec::new(),
    })
}

/// Estimates each intent slice independently; slices without observations
/// fall back to the per-column mean over the other slices and are flagged.
pub fn estimate_per_slice(w: &IntentTensor, cfg: &AlsConfig) -> Result<TensorEstimate, TensorError> {
    let (m, n, k) = w.dims();
    if w.observed_count() == 0 {
        return Err(TensorError::EmptyTensor);
    }
    let mut values = Array3::<f64>::zeros((m, n, k));
    let mut cold_slices = Vec::new();
    let mut warm = Vec::new();
    for l in 0..k {
        let slice = w.slice_matrix(l);
        if slice.observed_count() == 0 {
            cold_slices.push(l);
            continue;
        }
        let est = matest::als(&slice, cfg)?;
        for i in 0..m {
            for j in 0..n {
                values[[i, j, l]] = est.get(i, j);
            }
        }
        warm.push(l);
    }
    for &l in &cold_slices {
        for j in 0..n {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for i in 0..m {
                for &wl in &warm {
                    if let Some(v) = w.value(i, j, wl) {
                        sum += v;
                        cnt += 1;
                    }
                }
            }
            let fill = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
            for i in 0..m {
                values[[i, j, l]] = fill;
            }
        }
    }
    Ok(TensorEstimate { values, method: TensorMethod::PerSlice, cold_slices })
}

/// Uniform holdout over observed tensor cells, mirroring the matrix split.
pub fn split_tensor(
    w: &IntentTensor,
    fraction: f64,
    seed: u64,
) -> Result<(IntentTensor, Vec<(usize, usize, usize, f64)>), EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let mut cells = w.observed_cells();
    if cells.len() < 2 {
        return Err(EvalError::TooFewPairs);
    }
    let take = ((fraction * cells.len() as f64).floor() as usize)
        .max(1)
        .min(cells.len() - 1);
    let mut r = rng::stream(seed, "tensor-split");
    cells.shuffle(&mut r);
    let held: Vec<_> = cells[..take].to_vec();
    let test = held
        .iter()
        .map(|&(i, j, l)| (i, j, l, w.value(i, j, l).unwrap()))
        .collect();
    Ok((w.without_cells(&held), test))
}

/// Aggregated tensor CSV: `user_group,ad_category,intent,value,count`.
pub fn write_tensor_csv<W: Write>(writer: W, w: &IntentTensor) -> Result<(), TensorError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_group", "ad_category", "intent", "value", "count"])?;
    let (m, n, k) = w.dims();
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                if let Some(v) = w.value(i, j, l) {
                    wtr.write_record([
                        w.row_keys[i].as_str(),
                        w.col_keys[j].as_str(),
                        w.intent_keys[l].as_str(),
                        &format!("{v}"),
                        &format!("{}", w.count(i, j, l)),
                    ])?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
