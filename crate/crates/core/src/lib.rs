//! Estimation of click-through rates from sparse click logs, valuation of
//! individual user data against category baselines, offline-contract pricing
//! with a rotating-token query protocol, and rule-based ad URL identification.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`synth`] generates datasets from a known latent factor model so every
//!   estimator can be checked against ground truth,
//! * [`ingest`] reads click logs and aggregates them into a partially
//!   observed rate matrix,
//! * [`matest`] fills in the missing entries (truncated-SVD and alternating
//!   least squares estimators),
//! * [`vod`] turns an estimate into per-user, per-category data values,
//! * [`evalx`] measures estimator quality on held-out cells,
//! * [`tensor`] extends estimation to the intent-aware order-3 case,
//! * [`market`] prices data values through offline contracts and simulates
//!   the query protocol,
//! * [`adfilter`] identifies ad URLs with a two-level filter.

pub mod adfilter;
pub mod evalx;
pub mod ingest;
pub mod linalg;
pub mod market;
pub mod matest;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod vod;
