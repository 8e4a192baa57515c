//! Misuse intrusion detection for gas-pipeline SCADA traffic.
//!
//! The crate implements the full training and evaluation pipeline as a set of
//! small, composable modules:
//!
//! * [`taxonomy`] — the fixed 17-feature record schema and the two-level
//!   attack-class hierarchy (binary / 7 categories / 35 subclasses).
//! * [`ingest`] — CSV dataset IO and a seeded synthetic-record generator.
//! * [`impute`] — deterministic chained-equations imputation for missing
//!   payload values.
//! * [`partition`] — stratified three-way splits and the derived
//!   train/test folds.
//! * [`forest`] — a from-scratch CART random forest (Gini splits, bootstrap
//!   resampling, majority vote) with a versioned on-disk format.
//! * [`cascade`] — the three-stage classifier built on top of the forest:
//!   attack detection, then attack categorization, then per-category
//!   subclass identification.
//! * [`metrics`] — confusion matrices, one-vs-rest rates, and report
//!   rendering.
//!
//! Everything that draws randomness takes an explicit seed; identical seeds
//! reproduce identical artifacts, including serialized models.

pub mod cascade;
pub mod forest;
pub mod impute;
pub mod ingest;
pub mod metrics;
pub mod partition;
pub mod taxonomy;
