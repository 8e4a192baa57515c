//! Missing-value handling by chained equations.
//!
//! Payload cells may be missing (a command record has no response payload
//! and vice versa, plus plain packet loss). Downstream training requires
//! complete rows, so missing cells are filled by iterating per-feature
//! regressions: each incomplete feature is regressed on the other sixteen,
//! missing cells are replaced by the model's predictions, and the cycle
//! repeats so later features see earlier features' refreshed values.
//!
//! Numeric and timestamp features take the regression prediction directly.
//! Discrete features go through predictive mean matching: the prediction
//! selects the nearest observed rows by fitted value and the imputed value
//! is the consensus of those donors, which keeps every imputed cell inside
//! the feature's legal domain.
//!
//! The procedure is deterministic: identical input and configuration give
//! bitwise-identical output, and observed cells are never modified.

use crate::ingest::{Dataset, Provenance};
use crate::taxonomy::{FeatureKind, FEATURE_COUNT};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("feature {0:?} has no observed values to learn from")]
    AllMissing(String),
}

/// Numeric imputation model choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericModel {
    /// Least-squares linear regression on the other features.
    LinearRegression,
}

/// Discrete imputation model choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoricalModel {
    /// Predictive mean matching: impute the consensus value of the
    /// `donors` observed rows whose fitted values are nearest.
    PredictiveMeanMatching { donors: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputationConfig {
    /// Full passes over the incomplete features. Zero means initial fill
    /// only (column mean or consensus value).
    pub chain_iterations: usize,
    /// Reserved for stochastic model variants; the shipped models are
    /// deterministic and ignore it.
    pub seed: u64,
    pub numeric_model: NumericModel,
    pub categorical_model: CategoricalModel,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            chain_iterations: 10,
            seed: 0,
            numeric_model: NumericModel::LinearRegression,
            categorical_model: CategoricalModel::PredictiveMeanMatching { donors: 10 },
        }
    }
}

/// Which cells of a dataset are missing, per feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessMask {
    /// For each feature, the row indices whose cell is missing (ascending).
    pub rows_by_feature: Vec<Vec<usize>>,
}

impl MissingnessMask {
    pub fn total(&self) -> usize {
        self.rows_by_feature.iter().map(Vec::len).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.total() == 0
    }

    /// Feature indices with at least one missing cell, ordered by missing
    /// count (ascending) then feature index. This is the visit order of the
    /// chained pass: better-observed features stabilize first.
    pub fn visit_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rows_by_feature.len())
            .filter(|&f| !self.rows_by_feature[f].is_empty())
            .collect();
        order.sort_by_key(|&f| (self.rows_by_feature[f].len(), f));
        order
    }
}

pub fn detect_missing(dataset: &Dataset) -> MissingnessMask {
    let mut rows_by_feature = vec![Vec::new(); FEATURE_COUNT];
    for (row, record) in dataset.records.iter().enumerate() {
        for (feature, value) in record.features.iter().enumerate() {
            if value.is_none() {
                rows_by_feature[feature].push(row);
            }
        }
    }
    MissingnessMask { rows_by_feature }
}

/// Most frequent value; ties break to the smallest value.
fn consensus(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let mut best = values[0];
    let mut best_count = 0usize;
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        if j - i > best_count {
            best = values[i];
            best_count = j - i;
        }
        i = j;
    }
    best
}

struct FittedModel {
    /// Kept predictor columns with their standardization statistics.
    predictors: Vec<(usize, f64, f64)>,
    coefficients: Vec<f64>,
    target_mean: f64,
}

impl FittedModel {
    fn predict(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut value = self.target_mean;
        for ((feature, mean, std), beta) in self.predictors.iter().zip(&self.coefficients) {
            value += beta * (columns[*feature][row] - mean) / std;
        }
        value
    }
}

/// Least-squares fit of `target` on the remaining features over the
/// observed rows. Predictors are standardized (constant columns dropped)
/// and the system is solved through the pseudo-inverse, so exactly
/// collinear predictors are handled instead of blowing up.
fn fit_regression(columns: &[Vec<f64>], target: usize, observed: &[usize]) -> FittedModel {
    let n = observed.len() as f64;
    let target_mean = observed.iter().map(|&r| columns[target][r]).sum::<f64>() / n;

    let mut predictors = Vec::new();
    for (feature, column) in columns.iter().enumerate() {
        if feature == target {
            continue;
        }
        let mean = observed.iter().map(|&r| column[r]).sum::<f64>() / n;
        let variance = observed.iter().map(|&r| (column[r] - mean).powi(2)).sum::<f64>() / n;
        let std = variance.sqrt();
        if std > 0.0 && std.is_finite() {
            predictors.push((feature, mean, std));
        }
    }
    if predictors.is_empty() {
        return FittedModel { predictors, coefficients: Vec::new(), target_mean };
    }

    // Normal equations on the standardized design: G β = Zᵀ y_centered.
    let p = predictors.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut moment = DVector::<f64>::zeros(p);
    let mut z = vec![0.0f64; p];
    for &row in observed {
        for (k, (feature, mean, std)) in predictors.iter().enumerate() {
            z[k] = (columns[*feature][row] - mean) / std;
        }
        let y = columns[target][row] - target_mean;
        for a in 0..p {
            moment[a] += z[a] * y;
            for b in a..p {
                gram[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let svd = gram.svd(true, true);
    let tolerance = svd.singular_values.max() * 1e-12;
    let coefficients = svd
        .solve(&moment, tolerance)
        .map(|beta| beta.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; p]);
    FittedModel { predictors, coefficients, target_mean }
}

/// Donor rows whose fitted values are nearest to `prediction`; ties prefer
/// the earlier donor in fitted-value order.
fn nearest_donors(donors: &[(f64, f64)], prediction: f64, k: usize) -> (usize, usize) {
    let k = k.max(1).min(donors.len());
    let start = donors.partition_point(|&(fitted, _)| fitted < prediction);
    let (mut lo, mut hi) = (start, start);
    while hi - lo < k {
        if lo == 0 {
            hi += 1;
        } else if hi == donors.len()
            || (prediction - donors[lo - 1].0).abs() <= (donors[hi].0 - prediction).abs()
        {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    (lo, hi)
}

/// Fill every missing cell. See the module docs for the model; the
/// guarantees are: observed cells are bitwise unchanged, discrete features
/// stay inside their domains, the result is complete, and the whole
/// procedure is deterministic.
pub fn mice_impute(dataset: &Dataset, config: &ImputationConfig) -> Result<Dataset, ImputeError> {
    let schema = dataset.schema();
    let n = dataset.len();
    let mask = detect_missing(dataset);

    // Working copy, column-major.
    let mut columns: Vec<Vec<f64>> = vec![vec![0.0; n]; FEATURE_COUNT];
    let mut observed_rows: Vec<Vec<usize>> = vec![Vec::new(); FEATURE_COUNT];
    for feature in 0..FEATURE_COUNT {
        let missing = &mask.rows_by_feature[feature];
        if missing.len() == n && n > 0 {
            return Err(ImputeError::AllMissing(schema.descriptor(feature).name.to_string()));
        }
        let mut next_missing = missing.iter().copied().peekable();
        for (row, record) in dataset.records.iter().enumerate() {
            match record.features[feature] {
                Some(value) => {
                    columns[feature][row] = value;
                    observed_rows[feature].push(row);
                }
                None => {
                    next_missing.next();
                    // Placeholder until the initial fill below.
                }
            }
        }
        debug_assert!(next_missing.peek().is_none());
    }

    // Initial fill: column mean for numeric features, consensus value for
    // discrete ones.
    for feature in 0..FEATURE_COUNT {
        if mask.rows_by_feature[feature].is_empty() {
            continue;
        }
        let observed = &observed_rows[feature];
        let fill = match schema.descriptor(feature).kind {
            FeatureKind::Numeric | FeatureKind::Timestamp => {
                observed.iter().map(|&r| columns[feature][r]).sum::<f64>() / observed.len() as f64
            }
            FeatureKind::Binary01 | FeatureKind::Ternary012 => {
                let mut values: Vec<f64> = observed.iter().map(|&r| columns[feature][r]).collect();
                consensus(&mut values)
            }
        };
        for &row in &mask.rows_by_feature[feature] {
            columns[feature][row] = fill;
        }
    }

    let CategoricalModel::PredictiveMeanMatching { donors: donor_count } = config.categorical_model;
    let NumericModel::LinearRegression = config.numeric_model;

    for _ in 0..config.chain_iterations {
        for &feature in &mask.visit_order() {
            let observed = &observed_rows[feature];
            let model = fit_regression(&columns, feature, observed);
            match schema.descriptor(feature).kind {
                FeatureKind::Numeric | FeatureKind::Timestamp => {
                    for &row in &mask.rows_by_feature[feature] {
                        columns[feature][row] = model.predict(&columns, row);
                    }
                }
                FeatureKind::Binary01 | FeatureKind::Ternary012 => {
                    // (fitted value, observed value) per donor row, sorted
                    // by fitted value with row order as the tiebreak.
                    let mut donors: Vec<(f64, f64)> = observed
                        .iter()
                        .map(|&r| (model.predict(&columns, r), columns[feature][r]))
                        .collect();
                    donors.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let updates: Vec<(usize, f64)> = mask.rows_by_feature[feature]
                        .iter()
                        .map(|&row| {
                            let prediction = model.predict(&columns, row);
                            let (lo, hi) = nearest_donors(&donors, prediction, donor_count);
                            let mut pool: Vec<f64> =
                                donors[lo..hi].iter().map(|&(_, value)| value).collect();
                            (row, consensus(&mut pool))
                        })
                        .collect();
                    for (row, value) in updates {
                        columns[feature][row] = value;
                    }
                }
            }
        }
    }

    let mut records = dataset.records.clone();
    for (feature, rows) in mask.rows_by_feature.iter().enumerate() {
        for &row in rows {
            records[row].features[feature] = Some(columns[feature][row]);
        }
    }
    Ok(Dataset::new(records, Provenance::Imputed))
}
