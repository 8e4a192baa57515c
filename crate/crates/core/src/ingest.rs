//! Dataset IO and synthetic dataset generation.
//!
//! The on-disk form is UTF-8, comma-separated, LF-terminated: one header row
//! with the 17 feature names followed by `binary,categorized,specified`,
//! then one row per record. Missing cells are written as empty fields; on
//! read, an empty field or a literal `?` means missing. Feature values are
//! written with the shortest decimal form that parses back to the same
//! `f64`, so `load ∘ write` is the identity on records.

use crate::taxonomy::{
    validate_record, BinaryLabel, CategoryLabel, FeatureSchema, Record, SubclassLabel, Taxonomy,
    FEATURE_COUNT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io;
use thiserror::Error;

const LABEL_COLUMNS: [&str; 3] = ["binary", "categorized", "specified"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header has {found} columns, expected {expected}")]
    HeaderArity { expected: usize, found: usize },
    #[error("header column {column} is {found:?}, expected {expected:?}")]
    HeaderMismatch { column: usize, expected: String, found: String },
    #[error("line {line}: row has {found} fields, expected {expected}")]
    RowArity { line: u64, expected: usize, found: usize },
    #[error("line {line}: {column} value {value:?} is not usable")]
    BadValue { line: u64, column: String, value: String },
    #[error("line {line}: invalid record: {details}")]
    BadRecord { line: u64, details: String },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

/// Where a dataset's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
    Imputed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Imputed => "imputed",
        }
    }
}

/// An ordered collection of records under the fixed schema. Provenance is
/// in-memory metadata; the CSV form carries records only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: &'static FeatureSchema,
    pub records: Vec<Record>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(records: Vec<Record>, provenance: Provenance) -> Dataset {
        Dataset { schema: FeatureSchema::gas_pipeline(), records, provenance }
    }

    pub fn schema(&self) -> &'static FeatureSchema {
        self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per subclass label (0 = normal), ascending.
    pub fn subclass_histogram(&self) -> BTreeMap<u8, usize> {
        let mut histogram = BTreeMap::new();
        for record in &self.records {
            *histogram.entry(record.subclass.get()).or_insert(0) += 1;
        }
        histogram
    }

    /// Record count per category label (0 = normal), ascending.
    pub fn category_histogram(&self) -> BTreeMap<u8, usize> {
        let mut histogram = BTreeMap::new();
        for record in &self.records {
            *histogram.entry(record.category.get()).or_insert(0) += 1;
        }
        histogram
    }
}

// ---------------------------------------------------------------------------
// CSV IO
// ---------------------------------------------------------------------------

fn header(schema: &FeatureSchema) -> Vec<String> {
    schema
        .iter()
        .map(|d| d.name.to_string())
        .chain(LABEL_COLUMNS.iter().map(|s| s.to_string()))
        .collect()
}

/// Shortest decimal form that parses back to the same `f64`.
fn format_value(value: f64) -> String {
    format!("{value}")
}

/// Write a dataset in the canonical CSV form.
pub fn write_dataset<W: io::Write>(dataset: &Dataset, writer: W) -> Result<(), IngestError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(header(dataset.schema()))?;
    let mut fields: Vec<String> = Vec::with_capacity(FEATURE_COUNT + 3);
    for record in &dataset.records {
        fields.clear();
        for value in &record.features {
            fields.push(value.map(format_value).unwrap_or_default());
        }
        fields.push(record.binary.as_u8().to_string());
        fields.push(record.category.get().to_string());
        fields.push(record.subclass.get().to_string());
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_feature(raw: &str, line: u64, column: &str) -> Result<Option<f64>, IngestError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "?" {
        return Ok(None);
    }
    match trimmed.parse::<f64>() {
        Ok(value) if value.is_finite() => Ok(Some(value)),
        _ => {
            Err(IngestError::BadValue { line, column: column.to_string(), value: raw.to_string() })
        }
    }
}

/// Labels are integers; integral-valued floats ("1.0") are tolerated since
/// some exports write them that way.
fn parse_label(raw: &str, line: u64, column: &str) -> Result<u8, IngestError> {
    let bad = || IngestError::BadValue { line, column: column.to_string(), value: raw.to_string() };
    let value: f64 = raw.trim().parse().map_err(|_| bad())?;
    if !value.is_finite() || value.fract() != 0.0 || !(0.0..=255.0).contains(&value) {
        return Err(bad());
    }
    Ok(value as u8)
}

fn parse_typed_label<T>(
    raw: &str,
    line: u64,
    column: &str,
    make: impl FnOnce(u8) -> Result<T, crate::taxonomy::TaxonomyError>,
) -> Result<T, IngestError> {
    let value = parse_label(raw, line, column)?;
    make(value).map_err(|_| IngestError::BadValue {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Load a dataset, rejecting malformed rows with their line number. Every
/// record is checked against the schema and label-consistency rules.
pub fn load_dataset<R: io::Read>(
    reader: R,
    schema: &'static FeatureSchema,
) -> Result<Dataset, IngestError> {
    let mut input = csv::ReaderBuilder::new().flexible(true).from_reader(reader);

    let expected = header(schema);
    let found = input.headers()?.clone();
    if found.len() != expected.len() {
        return Err(IngestError::HeaderArity { expected: expected.len(), found: found.len() });
    }
    for (i, (want, got)) in expected.iter().zip(found.iter()).enumerate() {
        if want != got.trim() {
            return Err(IngestError::HeaderMismatch {
                column: i + 1,
                expected: want.clone(),
                found: got.to_string(),
            });
        }
    }

    let mut records = Vec::new();
    for row in input.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != expected.len() {
            return Err(IngestError::RowArity { line, expected: expected.len(), found: row.len() });
        }

        let mut features = [None; FEATURE_COUNT];
        for (i, slot) in features.iter_mut().enumerate() {
            *slot = parse_feature(&row[i], line, schema.descriptor(i).name)?;
        }
        let record = Record {
            features,
            binary: parse_typed_label(&row[FEATURE_COUNT], line, "binary", BinaryLabel::from_u8)?,
            category: parse_typed_label(
                &row[FEATURE_COUNT + 1],
                line,
                "categorized",
                CategoryLabel::new,
            )?,
            subclass: parse_typed_label(
                &row[FEATURE_COUNT + 2],
                line,
                "specified",
                SubclassLabel::new,
            )?,
        };

        let violations = validate_record(&record, schema);
        if !violations.is_empty() {
            let details: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(IngestError::BadRecord { line, details: details.join("; ") });
        }
        records.push(record);
    }

    Ok(Dataset::new(records, Provenance::Real))
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Instance counts per category in the original gas-pipeline corpus
/// (category 0 is normal traffic). Used to synthesize datasets with the
/// same class balance at a chosen scale.
pub const CORPUS_CATEGORY_COUNTS: [(u8, u64); 8] = [
    (0, 214_580),
    (1, 7_753),
    (2, 13_035),
    (3, 7_900),
    (4, 20_412),
    (5, 4_898),
    (6, 2_176),
    (7, 3_874),
];

/// How one feature of one subclass is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueModel {
    /// Uniform draw from `[lo, hi)`.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Uniform pick from a closed value set.
    Choice(Vec<f64>),
    Constant(f64),
    /// `factor ×` the value drawn for another (non-linked) feature of the
    /// same record. Lets tests plant exact linear relations.
    Linked {
        source: usize,
        factor: f64,
    },
}

/// Per-feature value models for one subclass.
pub type SubclassProfile = Vec<ValueModel>;

/// Everything needed to generate a dataset deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    /// Records to generate per subclass label (0 = normal).
    pub counts: BTreeMap<u8, usize>,
    /// Value models per subclass; must cover every counted subclass.
    pub profiles: BTreeMap<u8, SubclassProfile>,
    /// Independent per-cell drop probability, by payload feature index.
    pub missing_rates: BTreeMap<usize, f64>,
    pub seed: u64,
}

mod bands {
    //! Default value models: every subclass gets a band layout that a
    //! classifier can separate exactly (disjoint uniform ranges), loosely
    //! themed on what each attack manipulates.

    use super::{SubclassProfile, ValueModel};
    use crate::taxonomy::feature as f;
    use crate::taxonomy::FEATURE_COUNT;

    fn uniform(lo: f64, hi: f64) -> ValueModel {
        ValueModel::Uniform { lo, hi }
    }

    fn flag() -> ValueModel {
        ValueModel::Choice(vec![0.0, 1.0])
    }

    pub fn normal() -> SubclassProfile {
        let mut p = vec![ValueModel::Constant(0.0); FEATURE_COUNT];
        p[f::ADDRESS] = uniform(1.0, 4.0);
        p[f::LENGTH] = uniform(10.0, 20.0);
        p[f::GAIN] = uniform(10.0, 20.0);
        p[f::DEADBAND] = uniform(1.0, 2.0);
        p[f::RATE] = uniform(5.0, 10.0);
        p[f::CONTROL_SCHEME] = flag();
        p[f::SOLENOID] = flag();
        p[f::CRC_RATE] = uniform(0.0, 0.1);
        p[f::TIMESTAMP] = uniform(1.40e9, 1.41e9);
        p[f::FUNCTION] = ValueModel::Choice(vec![3.0, 16.0]);
        p[f::SET_POINT] = uniform(18.0, 22.0);
        p[f::RESET_RATE] = uniform(3.0, 6.0);
        p[f::CYCLE_TIME] = uniform(8.0, 12.0);
        p[f::SYSTEM_MODE] = ValueModel::Constant(1.0);
        p[f::PUMP_MODE] = flag();
        p[f::PRESSURE_MEASUREMENT] = uniform(15.0, 25.0);
        p[f::COMMAND_RESPONSE] = flag();
        p
    }

    /// Pressure band shared by the response-injection confusion pair when
    /// overlap is requested.
    pub const OVERLAP_PRESSURE: (f64, f64) = (2.0, 10.0);

    pub fn subclass(label: u8, pressure_overlap: bool) -> SubclassProfile {
        let mut p = normal();
        // Parameter pairs for command-parameter injections: odd subclasses
        // push a setting far outside the normal band, even ones to a
        // nearer but still distinct band.
        let mpci_param = |s: u8| match s {
            1 | 2 => f::SET_POINT,
            3 | 4 => f::GAIN,
            5 | 6 => f::RESET_RATE,
            7 | 8 => f::RATE,
            9 | 10 => f::DEADBAND,
            _ => f::CYCLE_TIME,
        };
        match label {
            // Parameter injections (category 4).
            1..=12 => {
                let band = if label % 2 == 1 { (100.0, 110.0) } else { (40.0, 50.0) };
                p[mpci_param(label)] = uniform(band.0, band.1);
            }
            // State-command injections (category 3): distinct function codes.
            13..=17 => {
                p[f::FUNCTION] = ValueModel::Constant(40.0 + f64::from(label - 13));
                if label == 15 {
                    p[f::SYSTEM_MODE] = ValueModel::Choice(vec![0.0, 2.0]);
                }
            }
            // Denial of service (category 6): corrupted checksums.
            18 => p[f::CRC_RATE] = uniform(5.0, 9.0),
            // Function-code injections (category 5).
            19 | 21 | 22 => {
                let offset = match label {
                    19 => 0.0,
                    21 => 1.0,
                    _ => 2.0,
                };
                p[f::FUNCTION] = ValueModel::Constant(90.0 + offset);
            }
            // Reconnaissance (category 7): short probe frames, scan codes.
            20 | 23 | 24 => {
                let offset = match label {
                    20 => 0.0,
                    23 => 1.0,
                    _ => 2.0,
                };
                p[f::FUNCTION] = ValueModel::Constant(70.0 + offset);
                p[f::LENGTH] = uniform(0.0, 2.0);
            }
            // Naive response injections (category 1): forged pressures.
            29 => {
                let band = if pressure_overlap { OVERLAP_PRESSURE } else { (60.0, 70.0) };
                p[f::PRESSURE_MEASUREMENT] = uniform(band.0, band.1);
            }
            30 => p[f::PRESSURE_MEASUREMENT] = uniform(80.0, 90.0),
            31 => p[f::PRESSURE_MEASUREMENT] = uniform(95.0, 105.0),
            32 => p[f::PRESSURE_MEASUREMENT] = uniform(-10.0, -5.0),
            // Complex response injections (category 2): forged pressures.
            25 => {
                let band = if pressure_overlap { OVERLAP_PRESSURE } else { (30.0, 40.0) };
                p[f::PRESSURE_MEASUREMENT] = uniform(band.0, band.1);
            }
            26 => p[f::PRESSURE_MEASUREMENT] = uniform(40.0, 50.0),
            27 => p[f::PRESSURE_MEASUREMENT] = uniform(110.0, 120.0),
            28 => p[f::PRESSURE_MEASUREMENT] = uniform(125.0, 135.0),
            33 => p[f::PRESSURE_MEASUREMENT] = uniform(140.0, 150.0),
            34 => p[f::PRESSURE_MEASUREMENT] = uniform(155.0, 165.0),
            35 => p[f::PRESSURE_MEASUREMENT] = uniform(170.0, 180.0),
            _ => {}
        }
        p
    }
}

impl SynthesisSpec {
    /// A spec whose default band layout makes every subclass separable from
    /// every other (and from normal traffic) by axis-aligned thresholds.
    pub fn separable(counts: BTreeMap<u8, usize>, seed: u64) -> SynthesisSpec {
        Self::with_overlap(counts, seed, false)
    }

    fn with_overlap(
        counts: BTreeMap<u8, usize>,
        seed: u64,
        pressure_overlap: bool,
    ) -> SynthesisSpec {
        let mut profiles = BTreeMap::new();
        for &label in counts.keys() {
            let profile =
                if label == 0 { bands::normal() } else { bands::subclass(label, pressure_overlap) };
            profiles.insert(label, profile);
        }
        SynthesisSpec { counts, profiles, missing_rates: BTreeMap::new(), seed }
    }

    /// Subclass counts matching the original corpus class balance, divided
    /// by `divisor` (rounded per category, spread evenly over the
    /// category's subclasses).
    pub fn corpus_proportions(divisor: u32, seed: u64) -> SynthesisSpec {
        let taxonomy = Taxonomy::shared();
        let mut counts = BTreeMap::new();
        for (category, corpus_count) in CORPUS_CATEGORY_COUNTS {
            let scaled = (corpus_count as f64 / f64::from(divisor)).round() as usize;
            if category == 0 {
                counts.insert(0u8, scaled);
                continue;
            }
            let subclasses =
                taxonomy.category_subclasses(CategoryLabel::new(category).expect("fixed table"));
            let base = scaled / subclasses.len();
            let remainder = scaled % subclasses.len();
            for (i, &subclass) in subclasses.iter().enumerate() {
                counts.insert(subclass, base + usize::from(i < remainder));
            }
        }
        Self::separable(counts, seed)
    }

    /// Re-derive the band layout with the response-injection pressure bands
    /// collapsed onto one shared range, reproducing the known confusion
    /// between the two response-injection categories.
    pub fn with_pressure_overlap(mut self) -> SynthesisSpec {
        let counts = std::mem::take(&mut self.counts);
        let mut overlapped = Self::with_overlap(counts, self.seed, true);
        overlapped.missing_rates = std::mem::take(&mut self.missing_rates);
        overlapped
    }

    /// Plant `pressure = factor × set point` exactly, for every subclass.
    pub fn with_linked_pressure(mut self, factor: f64) -> SynthesisSpec {
        use crate::taxonomy::feature as f;
        for profile in self.profiles.values_mut() {
            profile[f::PRESSURE_MEASUREMENT] = ValueModel::Linked { source: f::SET_POINT, factor };
        }
        self
    }

    /// Independently drop each cell of a payload feature with the given
    /// probability.
    pub fn with_missing_rate(mut self, feature: usize, rate: f64) -> SynthesisSpec {
        self.missing_rates.insert(feature, rate);
        self
    }

    fn validate(&self) -> Result<(), IngestError> {
        let schema = FeatureSchema::gas_pipeline();
        for &label in self.counts.keys() {
            SubclassLabel::new(label).map_err(|e| IngestError::InvalidSpec(e.to_string()))?;
            let profile = self.profiles.get(&label).ok_or_else(|| {
                IngestError::InvalidSpec(format!("no profile for subclass {label}"))
            })?;
            if profile.len() != FEATURE_COUNT {
                return Err(IngestError::InvalidSpec(format!(
                    "profile for subclass {label} has {} models, expected {FEATURE_COUNT}",
                    profile.len()
                )));
            }
            for (i, model) in profile.iter().enumerate() {
                if let ValueModel::Linked { source, .. } = model {
                    if *source >= FEATURE_COUNT {
                        return Err(IngestError::InvalidSpec(format!(
                            "linked feature {i} references out-of-range column {source}"
                        )));
                    }
                    if matches!(profile[*source], ValueModel::Linked { .. }) {
                        return Err(IngestError::InvalidSpec(format!(
                            "linked feature {i} references another linked column {source}"
                        )));
                    }
                }
            }
        }
        for (&feature, &rate) in &self.missing_rates {
            if feature >= FEATURE_COUNT || !schema.is_payload(feature) {
                return Err(IngestError::InvalidSpec(format!(
                    "missing-value rates only apply to payload features, got column {feature}"
                )));
            }
            if !(0.0..=1.0).contains(&rate) {
                return Err(IngestError::InvalidSpec(format!(
                    "missing rate {rate} for column {feature} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Generate a labeled dataset from a spec. Identical specs (including the
/// seed) produce identical datasets.
pub fn generate_synthetic(spec: &SynthesisSpec) -> Result<Dataset, IngestError> {
    spec.validate()?;
    let taxonomy = Taxonomy::shared();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let total: usize = spec.counts.values().sum();
    let mut records = Vec::with_capacity(total);
    for (&label, &count) in &spec.counts {
        let subclass = SubclassLabel::new(label).expect("validated");
        let (binary, category) = if subclass.is_normal() {
            (BinaryLabel::Normal, CategoryLabel::NORMAL)
        } else {
            (BinaryLabel::Attack, taxonomy.subclass_to_category(subclass).expect("validated"))
        };
        let profile = &spec.profiles[&label];
        for _ in 0..count {
            let mut features = [0.0f64; FEATURE_COUNT];
            for (i, model) in profile.iter().enumerate() {
                features[i] = match model {
                    ValueModel::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
                    ValueModel::Choice(values) => values[rng.gen_range(0..values.len())],
                    ValueModel::Constant(value) => *value,
                    ValueModel::Linked { .. } => 0.0, // resolved below
                };
            }
            for (i, model) in profile.iter().enumerate() {
                if let ValueModel::Linked { source, factor } = model {
                    features[i] = factor * features[*source];
                }
            }
            records.push(Record::complete(features, binary, category, subclass));
        }
    }

    for record in &mut records {
        for (&feature, &rate) in &spec.missing_rates {
            if rate > 0.0 && rng.gen_bool(rate) {
                record.features[feature] = None;
            }
        }
    }

    Ok(Dataset::new(records, Provenance::Synthetic))
}
