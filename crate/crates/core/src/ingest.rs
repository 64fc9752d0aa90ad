//! Click-log ingestion: reading CSV logs, aggregating empirical click rates
//! per (user group, ad category) cell, the row-level rate threshold filter,
//! and singular-spectrum diagnostics.
//!
//! Cells store exact click and exposure counts, so aggregation order never
//! changes a value and serialization round-trips bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("{malformed} of {total} rows malformed (limit {limit_percent}%)")]
    TooManyMalformed { malformed: u64, total: u64, limit_percent: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("threshold filter removed every row")]
    AllRowsRemoved,
    #[error("matrix is degenerate after filtering")]
    DegenerateMatrix,
    #[error("taxonomy parse error at line {0}")]
    TaxonomyParse(usize),
}

/// One observed ad exposure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRecord {
    pub user_group: String,
    pub ad_category: String,
    pub intent: Option<String>,
    pub clicked: bool,
}

/// Column names used when reading a click log.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub user_group: String,
    pub ad_category: String,
    pub intent: String,
    pub clicked: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            user_group: "user_group".into(),
            ad_category: "ad_category".into(),
            intent: "intent".into(),
            clicked: "clicked".into(),
        }
    }
}

/// A parsed click log plus malformed-row diagnostics.
#[derive(Debug)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
    pub malformed: u64,
    pub total_rows: u64,
}

/// Partially observed empirical click-rate matrix. A cell is missing exactly
/// when its exposure count is zero; present values are `clicks / count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMatrix {
    row_keys: Vec<String>,
    col_keys: Vec<String>,
    clicks: Array2<u64>,
    counts: Array2<u64>,
}

impl ObservationMatrix {
    pub fn from_counts(
        row_keys: Vec<String>,
        col_keys: Vec<String>,
        clicks: Array2<u64>,
        counts: Array2<u64>,
    ) -> Self {
        assert_eq!(clicks.dim(), counts.dim());
        assert_eq!(clicks.nrows(), row_keys.len());
        assert_eq!(clicks.ncols(), col_keys.len());
        for (c, t) in clicks.iter().zip(counts.iter()) {
            assert!(c <= t, "clicks exceed exposures in a cell");
        }
        Self { row_keys, col_keys, clicks, counts }
    }

    pub fn nrows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_keys.len()
    }

    pub fn row_keys(&self) -> &[String] {
        &self.row_keys
    }

    pub fn col_keys(&self) -> &[String] {
        &self.col_keys
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[[i, j]]
    }

    pub fn clicks(&self, i: usize, j: usize) -> u64 {
        self.clicks[[i, j]]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.counts[[i, j]] > 0
    }

    /// Empirical rate of a cell, `None` when unobserved.
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let t = self.counts[[i, j]];
        (t > 0).then(|| self.clicks[[i, j]] as f64 / t as f64)
    }

    pub fn observed_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                if self.is_observed(i, j) {
                    cells.push((i, j));
                }
            }
        }
        cells
    }

    pub fn observed_count(&self) -> usize {
        self.counts.iter().filter(|&&t| t > 0).count()
    }

    /// Observed fraction of cells, the propensity estimate.
    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / (self.nrows() * self.ncols()) as f64
    }

    pub fn total_exposures(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Dense copy with missing cells as zero.
    pub fn zero_filled(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.nrows(), self.ncols()));
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                if let Some(v) = self.value(i, j) {
                    out[[i, j]] = v;
                }
            }
        }
        out
    }

    /// Copy with the given cells blanked out (counts zeroed).
    pub fn without_cells(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j) in cells {
            out.clicks[[i, j]] = 0;
            out.counts[[i, j]] = 0;
        }
        out
    }

    /// Copy keeping only the listed cells.
    pub fn retain_cells(&self, cells: &[(usize, usize)]) -> Self {
        let mut clicks = Array2::<u64>::zeros(self.clicks.dim());
        let mut counts = Array2::<u64>::zeros(self.counts.dim());
        for &(i, j) in cells {
            clicks[[i, j]] = self.clicks[[i, j]];
            counts[[i, j]] = self.counts[[i, j]];
        }
        Self {
            row_keys: self.row_keys.clone(),
            col_keys: self.col_keys.clone(),
            clicks,
            counts,
        }
    }

    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let mut clicks = Array2::<u64>::zeros((keep.len(), self.ncols()));
        let mut counts = Array2::<u64>::zeros((keep.len(), self.ncols()));
        for (out_i, &i) in keep.iter().enumerate() {
            for j in 0..self.ncols() {
                clicks[[out_i, j]] = self.clicks[[i, j]];
                counts[[out_i, j]] = self.counts[[i, j]];
            }
        }
        Self {
            row_keys: keep.iter().map(|&i| self.row_keys[i].clone()).collect(),
            col_keys: self.col_keys.clone(),
            clicks,
            counts,
        }
    }

    /// Expands cells back into one record per exposure (clicks first), the
    /// inverse of [`aggregate`] up to record order.
    pub fn to_records(&self) -> Vec<ClickRecord> {
        let mut records = Vec::new();
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                let t = self.counts[[i, j]];
                let c = self.clicks[[i, j]];
                for e in 0..t {
                    records.push(ClickRecord {
                        user_group: self.row_keys[i].clone(),
                        ad_category: self.col_keys[j].clone(),
                        intent: None,
                        clicked: e < c,
                    });
                }
            }
        }
        records
    }
}

/// Partially observed (user × category × intent) rate tensor; mirrors
/// [`ObservationMatrix`] cell-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentTensor {
    pub row_keys: Vec<String>,
    pub col_keys: Vec<String>,
    pub intent_keys: Vec<String>,
    clicks: ndarray::Array3<u64>,
    counts: ndarray::Array3<u64>,
}

impl IntentTensor {
    pub fn from_counts(
        row_keys: Vec<String>,
        col_keys: Vec<String>,
        intent_keys: Vec<String>,
        clicks: ndarray::Array3<u64>,
        counts: ndarray::Array3<u64>,
    ) -> Self {
        assert_eq!(clicks.dim(), counts.dim());
        assert_eq!(clicks.dim().0, row_keys.len());
        assert_eq!(clicks.dim().1, col_keys.len());
        assert_eq!(clicks.dim().2, intent_keys.len());
        Self { row_keys, col_keys, intent_keys, clicks, counts }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.clicks.dim()
    }

    pub fn count(&self, i: usize, j: usize, l: usize) -> u64 {
        self.counts[[i, j, l]]
    }

    pub fn clicks(&self, i: usize, j: usize, l: usize) -> u64 {
        self.clicks[[i, j, l]]
    }

    pub fn is_observed(&self, i: usize, j: usize, l: usize) -> bool {
        self.counts[[i, j, l]] > 0
    }

    pub fn value(&self, i: usize, j: usize, l: usize) -> Option<f64> {
        let t = self.counts[[i, j, l]];
        (t > 0).then(|| self.clicks[[i, j, l]] as f64 / t as f64)
    }

    pub fn observed_count(&self) -> usize {
        self.counts.iter().filter(|&&t| t > 0).count()
    }

    pub fn observed_cells(&self) -> Vec<(usize, usize, usize)> {
        let (m, n, k) = self.dims();
        let mut cells = Vec::new();
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    if self.is_observed(i, j, l) {
                        cells.push((i, j, l));
                    }
                }
            }
        }
        cells
    }

    /// Copy with the given cells blanked out (counts zeroed).
    pub fn without_cells(&self, cells: &[(usize, usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j, l) in cells {
            out.clicks[[i, j, l]] = 0;
            out.counts[[i, j, l]] = 0;
        }
        out
    }

    /// The l-th user×category slice as an observation matrix.
    pub fn slice_matrix(&self, l: usize) -> ObservationMatrix {
        let (m, n, _) = self.dims();
        let mut clicks = Array2::<u64>::zeros((m, n));
        let mut counts = Array2::<u64>::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                clicks[[i, j]] = self.clicks[[i, j, l]];
                counts[[i, j]] = self.counts[[i, j, l]];
            }
        }
        ObservationMatrix::from_counts(
            self.row_keys.clone(),
            self.col_keys.clone(),
            clicks,
            counts,
        )
    }
}

/// Two-tier advertiser category taxonomy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub tier1: Vec<String>,
    pub tier2: BTreeMap<String, Vec<String>>,
}

impl Taxonomy {
    /// The bundled two-tier table: 28 tier-1 categories, 341 tier-2 entries.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/taxonomy.csv")).expect("bundled taxonomy is valid")
    }

    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut tier1 = Vec::new();
        let mut tier2: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue; // header
            }
            let (t1, t2) = line.split_once(',').ok_or(IngestError::TaxonomyParse(lineno + 1))?;
            let t1 = t1.trim().to_string();
            let t2 = t2.trim().to_string();
            if t1.is_empty() || t2.is_empty() {
                return Err(IngestError::TaxonomyParse(lineno + 1));
            }
            if !tier2.contains_key(&t1) {
                tier1.push(t1.clone());
            }
            tier2.entry(t1).or_default().push(t2);
        }
        Ok(Self { tier1, tier2 })
    }

    pub fn tier2_total(&self) -> usize {
        self.tier2.values().map(Vec::len).sum()
    }
}

/// Fraction of malformed rows tolerated before the reader aborts.
pub const MALFORMED_LIMIT: f64 = 0.01;

pub fn read_click_log(path: &Path, schema: &ColumnSchema) -> Result<ClickLog, IngestError> {
    let file = std::fs::File::open(path)?;
    read_click_log_from(file, schema)
}

pub fn read_click_log_from<R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<ClickLog, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ug = find(&schema.user_group)
        .ok_or_else(|| IngestError::MissingColumn(schema.user_group.clone()))?;
    let ac = find(&schema.ad_category)
        .ok_or_else(|| IngestError::MissingColumn(schema.ad_category.clone()))?;
    let cl = find(&schema.clicked)
        .ok_or_else(|| IngestError::MissingColumn(schema.clicked.clone()))?;
    let intent_idx = find(&schema.intent);

    let mut records = Vec::new();
    let mut malformed = 0u64;
    let mut total = 0u64;
    for row in rdr.records() {
        total += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                malformed += 1;
                continue;
            }
        };
        let user_group = row.get(ug).unwrap_or("").trim();
        let ad_category = row.get(ac).unwrap_or("").trim();
        let clicked = match row.get(cl).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            _ => {
                malformed += 1;
                continue;
            }
        };
        if user_group.is_empty() || ad_category.is_empty() {
            malformed += 1;
            continue;
        }
        let intent = intent_idx
            .and_then(|idx| row.get(idx))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from);
        records.push(ClickRecord {
            user_group: user_group.to_string(),
            ad_category: ad_category.to_string(),
            intent,
            clicked,
        });
    }
    if total > 0 && malformed as f64 > MALFORMED_LIMIT * total as f64 {
        return Err(IngestError::TooManyMalformed {
            malformed,
            total,
            limit_percent: MALFORMED_LIMIT * 100.0,
        });
    }
    Ok(ClickLog { records, malformed, total_rows: total })
}

pub fn write_click_log<'a, W: Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a ClickRecord>,
) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_group", "ad_category", "intent", "clicked"])?;
    for r in records {
        wtr.write_record([
            r.user_group.as_str(),
            r.ad_category.as_str(),
            r.intent.as_deref().unwrap_or(""),
            if r.clicked { "1" } else { "0" },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Aggregates records into the rate matrix; keys are sorted lexicographically
/// so indices are reproducible across runs.
pub fn aggregate<'a>(
    records: impl IntoIterator<Item = &'a ClickRecord>,
) -> Result<ObservationMatrix, IngestError> {
    let mut cells: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    let mut rows = std::collections::BTreeSet::new();
    let mut cols = std::collections::BTreeSet::new();
    let mut any = false;
    for r in records {
        any = true;
        rows.insert(r.user_group.clone());
        cols.insert(r.ad_category.clone());
        let entry = cells.entry((r.user_group.clone(), r.ad_category.clone())).or_insert((0, 0));
        entry.0 += u64::from(r.clicked);
        entry.1 += 1;
    }
    if !any {
        return Err(IngestError::EmptyInput);
    }
    let row_keys: Vec<String> = rows.into_iter().collect();
    let col_keys: Vec<String> = cols.into_iter().collect();
    let row_index: BTreeMap<&str, usize> =
        row_keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let col_index: BTreeMap<&str, usize> =
        col_keys.iter().enumerate().map(|(j, k)| (k.as_str(), j)).collect();
    let mut clicks = Array2::<u64>::zeros((row_keys.len(), col_keys.len()));
    let mut counts = Array2::<u64>::zeros((row_keys.len(), col_keys.len()));
    for ((ug, ac), (c, t)) in cells {
        let i = row_index[ug.as_str()];
        let j = col_index[ac.as_str()];
        clicks[[i, j]] = c;
        counts[[i, j]] = t;
    }
    Ok(ObservationMatrix::from_counts(row_keys, col_keys, clicks, counts))
}

/// Aggregates records carrying an intent key into the order-3 tensor.
/// Records without intent are counted as skipped.
pub fn aggregate_tensor<'a>(
    records: impl IntoIterator<Item = &'a ClickRecord>,
) -> Result<(IntentTensor, u64), IngestError> {
    let mut cells: BTreeMap<(String, String, String), (u64, u64)> = BTreeMap::new();
    let mut rows = std::collections::BTreeSet::new();
    let mut cols = std::collections::BTreeSet::new();
    let mut intents = std::collections::BTreeSet::new();
    let mut skipped = 0u64;
    for r in records {
        let Some(intent) = &r.intent else {
            skipped += 1;
            continue;
        };
        rows.insert(r.user_group.clone());
        cols.insert(r.ad_category.clone());
        intents.insert(intent.clone());
        let entry = cells
            .entry((r.user_group.clone(), r.ad_category.clone(), intent.clone()))
            .or_insert((0, 0));
        entry.0 += u64::from(r.clicked);
        entry.1 += 1;
    }
    if cells.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let row_keys: Vec<String> = rows.into_iter().collect();
    let col_keys: Vec<String> = cols.into_iter().collect();
    let intent_keys: Vec<String> = intents.into_iter().collect();
    let idx = |keys: &[String], k: &str| keys.iter().position(|x| x == k).unwrap();
    let mut clicks =
        ndarray::Array3::<u64>::zeros((row_keys.len(), col_keys.len(), intent_keys.len()));
    let mut counts = clicks.clone();
    for ((ug, ac, it), (c, t)) in cells {
        let i = idx(&row_keys, &ug);
        let j = idx(&col_keys, &ac);
        let l = idx(&intent_keys, &it);
        clicks[[i, j, l]] = c;
        counts[[i, j, l]] = t;
    }
    Ok((IntentTensor::from_counts(row_keys, col_keys, intent_keys, clicks, counts), skipped))
}

/// Drops every user row whose aggregate rate (total clicks / total exposures)
/// exceeds `tau`. Returns the filtered matrix and the exposure retention.
pub fn threshold_filter(
    x: &ObservationMatrix,
    tau: f64,
) -> Result<(ObservationMatrix, f64), IngestError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(IngestError::InvalidThreshold(tau));
    }
    let mut keep = Vec::new();
    for i in 0..x.nrows() {
        let (mut clicks, mut exposures) = (0u64, 0u64);
        for j in 0..x.ncols() {
            clicks += x.clicks(i, j);
            exposures += x.count(i, j);
        }
        let rate = if exposures == 0 { 0.0 } else { clicks as f64 / exposures as f64 };
        if rate <= tau {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(IngestError::AllRowsRemoved);
    }
    let filtered = x.select_rows(&keep);
    let retention = filtered.total_exposures() as f64 / x.total_exposures() as f64;
    Ok((filtered, retention))
}

/// One row of the spectrum diagnostic table.
#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub tau: f64,
    pub retention: f64,
    pub singular_values: Vec<f64>,
}

/// Threshold-filters at each `tau`, zero-fills, and reports singular values
/// in descending order; rows sorted by `tau` descending.
pub fn singular_spectrum(
    x: &ObservationMatrix,
    tau_list: &[f64],
) -> Result<Vec<SpectrumRow>, IngestError> {
    if x.observed_count() == 0 {
        return Err(IngestError::EmptyInput);
    }
    let mut taus = tau_list.to_vec();
    taus.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut out = Vec::new();
    for tau in taus {
        let (filtered, retention) = threshold_filter(x, tau)?;
        if filtered.nrows() == 0 || filtered.observed_count() == 0 {
            return Err(IngestError::DegenerateMatrix);
        }
        let sv = linalg::singular_values(filtered.zero_filled().view());
        out.push(SpectrumRow { tau, retention, singular_values: sv });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(text: &str) -> ClickLog {
        read_click_log_from(text.as_bytes(), &ColumnSchema::default()).unwrap()
    }

    #[test]
    fn three_row_file_yields_three_records() {
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\nu2,c1,,0\nu1,c2,i1,0\n");
        assert_eq!(l.records.len(), 3);
        assert_eq!(l.malformed, 0);
        assert!(l.records[0].clicked);
        assert!(!l.records[1].clicked);
        assert_eq!(l.records[2].intent.as_deref(), Some("i1"));
    }

    #[test]
    fn missing_column_is_an_error() {
        let r = read_click_log_from("a,b\n1,2\n".as_bytes(), &ColumnSchema::default());
        assert!(matches!(r, Err(IngestError::MissingColumn(_))));
    }

    #[test]
    fn malformed_rows_counted_and_capped() {
        // 1 bad row of 2 exceeds the 1% limit.
        let r = read_click_log_from(
            "user_group,ad_category,intent,clicked\nu1,c1,,1\nu2,c1,,x\n".as_bytes(),
            &ColumnSchema::default(),
        );
        assert!(matches!(r, Err(IngestError::TooManyMalformed { malformed: 1, .. })));
    }

    #[test]
    fn single_record_aggregates_to_unit_cell() {
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\n");
        let x = aggregate(&l.records).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (1, 1));
        assert_eq!(x.value(0, 0), Some(1.0));
        assert_eq!(x.count(0, 0), 1);
    }

    #[test]
    fn two_records_same_cell_average() {
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\nu1,c1,,0\n");
        let x = aggregate(&l.records).unwrap();
        assert_eq!(x.value(0, 0), Some(0.5));
        assert_eq!(x.count(0, 0), 2);
    }

    #[test]
    fn aggregate_empty_is_error() {
        assert!(matches!(aggregate(&[]), Err(IngestError::EmptyInput)));
    }

    #[test]
    fn keys_sorted_lexicographically() {
        let l = log("user_group,ad_category,intent,clicked\nzz,c2,,0\naa,c1,,1\nmm,c1,,0\n");
        let x = aggregate(&l.records).unwrap();
        assert_eq!(x.row_keys(), &["aa".to_string(), "mm".into(), "zz".into()]);
        assert_eq!(x.col_keys(), &["c1".to_string(), "c2".into()]);
    }

    #[test]
    fn desk_scale_aggregate_rate_matches_source_rate() {
        // Synthetic log with the same aggregate click rate as the full-scale
        // source data (~0.00603), checked at 100k rows.
        let total = 100_000u64;
        let clicks = 603u64;
        let mut records = Vec::new();
        for i in 0..total {
            records.push(ClickRecord {
                user_group: format!("u{:02}", i % 50),
                ad_category: format!("c{:02}", i % 20),
                intent: None,
                clicked: i < clicks,
            });
        }
        let x = aggregate(&records).unwrap();
        let total_clicks: u64 =
            (0..x.nrows()).flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| x.clicks(i, j))
                .sum();
        assert_eq!(total_clicks, clicks);
        assert_eq!(x.total_exposures(), total);
        let agg_rate = total_clicks as f64 / total as f64;
        assert!((agg_rate - 0.00603).abs() < 1e-9);
    }

    #[test]
    fn threshold_identity_at_one() {
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\nu2,c1,,0\n");
        let x = aggregate(&l.records).unwrap();
        let (y, retention) = threshold_filter(&x, 1.0).unwrap();
        assert_eq!(y, x);
        assert_eq!(retention, 1.0);
    }

    #[test]
    fn threshold_removes_hot_rows() {
        // u1 rate 1.0, u2 rate 0.0
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\nu2,c1,,0\n");
        let x = aggregate(&l.records).unwrap();
        let (y, retention) = threshold_filter(&x, 0.02).unwrap();
        assert_eq!(y.row_keys(), &["u2".to_string()]);
        assert_eq!(retention, 0.5);
    }

    #[test]
    fn threshold_all_removed_is_error() {
        let l = log("user_group,ad_category,intent,clicked\nu1,c1,,1\n");
        let x = aggregate(&l.records).unwrap();
        assert!(matches!(threshold_filter(&x, 0.02), Err(IngestError::AllRowsRemoved)));
    }

    #[test]
    fn threshold_is_idempotent_and_nested() {
        let l = log(
            "user_group,ad_category,intent,clicked\n\
             u1,c1,,1\nu1,c2,,1\nu2,c1,,0\nu2,c2,,1\nu3,c1,,0\nu3,c2,,0\n",
        );
        let x = aggregate(&l.records).unwrap();
        let (once, _) = threshold_filter(&x, 0.6).unwrap();
        let (twice, _) = threshold_filter(&once, 0.6).unwrap();
        assert_eq!(once, twice);
        // tighter tau keeps a subset of rows
        let (tight, _) = threshold_filter(&x, 0.1).unwrap();
        for key in tight.row_keys() {
            assert!(once.row_keys().contains(key));
        }
    }

    #[test]
    fn spectrum_of_exact_rank_two_matrix() {
        // rank-2 fully observed: outer products scaled into rates
        let m = 6;
        let n = 5;
        let mut clicks = Array2::<u64>::zeros((m, n));
        let mut counts = Array2::<u64>::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                // value = (i+1)(j+1) + (i%2)(j%2) scaled by denominator 1000
                let v = (i + 1) * (j + 1) * 4 + (i % 2) * (j % 2) * 7;
                clicks[[i, j]] = v as u64;
                counts[[i, j]] = 1000;
            }
        }
        let x = ObservationMatrix::from_counts(
            (0..m).map(|i| format!("u{i}")).collect(),
            (0..n).map(|j| format!("c{j}")).collect(),
            clicks,
            counts,
        );
        let rows = singular_spectrum(&x, &[1.0]).unwrap();
        let sv = &rows[0].singular_values;
        assert!(sv[2] / sv[0] < 1e-9, "third singular value too large: {:?}", sv);
    }

    #[test]
    fn spectrum_rows_sorted_by_tau_descending() {
        let l = log(
            "user_group,ad_category,intent,clicked\nu1,c1,,0\nu1,c2,,1\nu2,c1,,0\nu2,c2,,0\n",
        );
        let x = aggregate(&l.records).unwrap();
        let rows = singular_spectrum(&x, &[0.6, 1.0]).unwrap();
        assert_eq!(rows[0].tau, 1.0);
        assert_eq!(rows[1].tau, 0.6);
    }

    #[test]
    fn round_trip_through_csv_is_identity() {
        let l = log(
            "user_group,ad_category,intent,clicked\n\
             u1,c1,,1\nu1,c1,,0\nu2,c2,,1\nu1,c2,,0\n",
        );
        let x = aggregate(&l.records).unwrap();
        let mut buf = Vec::new();
        write_click_log(&mut buf, &x.to_records()).unwrap();
        let reread = read_click_log_from(&buf[..], &ColumnSchema::default()).unwrap();
        let y = aggregate(&reread.records).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn bundled_taxonomy_counts() {
        let t = Taxonomy::bundled();
        assert_eq!(t.tier1.len(), 28);
        assert_eq!(t.tier2_total(), 341);
    }
}
