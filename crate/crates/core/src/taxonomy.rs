//! Record schema and the fixed attack-class hierarchy.
//!
//! A record is one captured SCADA transaction: 17 features split across
//! network-level fields, command-payload fields, and a single
//! response-payload field, plus three label views of increasing
//! granularity (normal/attack, 7 attack categories, 35 attack subclasses).
//! The hierarchy is fixed: every subclass belongs to exactly one category,
//! and label `0` means "normal" in all three views.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

/// Number of features in every record.
pub const FEATURE_COUNT: usize = 17;

/// Highest valid attack-subclass label (1..=35; 0 is normal).
pub const SUBCLASS_MAX: u8 = 35;

/// Highest valid attack-category label (1..=7; 0 is normal).
pub const CATEGORY_MAX: u8 = 7;

/// Version tag embedded in model manifests so a stored cascade can be
/// checked against the hierarchy it was trained under.
pub const TAXONOMY_VERSION: &str = "gas-pipeline-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("subclass {0} is outside the valid range 0..={SUBCLASS_MAX}")]
    InvalidSubclass(u8),
    #[error("category {0} is outside the valid range 0..={CATEGORY_MAX}")]
    InvalidCategory(u8),
    #[error("binary label {0} must be 0 (normal) or 1 (attack)")]
    InvalidBinary(u8),
    #[error("subclass 0 is normal traffic and has no attack category")]
    NormalHasNoCategory,
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Where in the protocol stack a feature is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGroup {
    Network,
    CommandPayload,
    ResponsePayload,
}

/// Value domain of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Unconstrained finite numeric value.
    Numeric,
    /// Numeric timestamp; treated as a plain numeric value throughout.
    Timestamp,
    /// Flag taking only the values 0 or 1.
    Binary01,
    /// Mode selector taking only the values 0, 1, or 2.
    Ternary012,
}

impl FeatureKind {
    /// The closed value set for discrete kinds, `None` for unconstrained ones.
    pub fn domain(self) -> Option<&'static [f64]> {
        match self {
            FeatureKind::Binary01 => Some(&[0.0, 1.0]),
            FeatureKind::Ternary012 => Some(&[0.0, 1.0, 2.0]),
            _ => None,
        }
    }

    /// Whether `value` is admissible for this kind (finite, and in the
    /// closed domain for discrete kinds).
    pub fn admits(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self.domain() {
            Some(values) => values.contains(&value),
            None => true,
        }
    }
}

/// One column of the record layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDescriptor {
    pub name: &'static str,
    pub group: FeatureGroup,
    pub kind: FeatureKind,
}

/// Feature indices by name, for call sites that address columns directly.
pub mod feature {
    pub const ADDRESS: usize = 0;
    pub const LENGTH: usize = 1;
    pub const GAIN: usize = 2;
    pub const DEADBAND: usize = 3;
    pub const RATE: usize = 4;
    pub const CONTROL_SCHEME: usize = 5;
    pub const SOLENOID: usize = 6;
    pub const CRC_RATE: usize = 7;
    pub const TIMESTAMP: usize = 8;
    pub const FUNCTION: usize = 9;
    pub const SET_POINT: usize = 10;
    pub const RESET_RATE: usize = 11;
    pub const CYCLE_TIME: usize = 12;
    pub const SYSTEM_MODE: usize = 13;
    pub const PUMP_MODE: usize = 14;
    pub const PRESSURE_MEASUREMENT: usize = 15;
    pub const COMMAND_RESPONSE: usize = 16;
}

use FeatureGroup::{CommandPayload, Network, ResponsePayload};
use FeatureKind::{Binary01, Numeric, Ternary012, Timestamp};

const DESCRIPTORS: [FeatureDescriptor; FEATURE_COUNT] = [
    FeatureDescriptor { name: "Address", group: Network, kind: Numeric },
    FeatureDescriptor { name: "Length", group: Network, kind: Numeric },
    FeatureDescriptor { name: "Gain", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Deadband", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Rate", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Control Scheme", group: CommandPayload, kind: Binary01 },
    FeatureDescriptor { name: "Solenoid", group: CommandPayload, kind: Binary01 },
    FeatureDescriptor { name: "CRC Rate", group: Network, kind: Numeric },
    FeatureDescriptor { name: "Timestamp", group: Network, kind: Timestamp },
    FeatureDescriptor { name: "Function", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Set Point", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Reset Rate", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "Cycle Time", group: CommandPayload, kind: Numeric },
    FeatureDescriptor { name: "System Mode", group: CommandPayload, kind: Ternary012 },
    FeatureDescriptor { name: "Pump Mode", group: CommandPayload, kind: Binary01 },
    FeatureDescriptor { name: "Pressure Measurement", group: ResponsePayload, kind: Numeric },
    FeatureDescriptor { name: "Command Response", group: Network, kind: Binary01 },
];

/// The fixed, ordered 17-feature layout shared by every dataset.
#[derive(Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    descriptors: &'static [FeatureDescriptor; FEATURE_COUNT],
}

impl FeatureSchema {
    /// The gas-pipeline record layout. There is exactly one schema; this
    /// returns the shared instance.
    pub fn gas_pipeline() -> &'static FeatureSchema {
        static SCHEMA: FeatureSchema = FeatureSchema { descriptors: &DESCRIPTORS };
        &SCHEMA
    }

    pub fn len(&self) -> usize {
        FEATURE_COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn descriptor(&self, index: usize) -> &FeatureDescriptor {
        &self.descriptors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureDescriptor> {
        self.descriptors.iter()
    }

    /// Column index of a feature by its exact name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.descriptors.iter().position(|d| d.name == name)
    }

    /// Payload features (command or response) are the only ones that may be
    /// missing in raw captures.
    pub fn is_payload(&self, index: usize) -> bool {
        self.descriptors[index].group != Network
    }

    /// Indices of all payload features, in column order.
    pub fn payload_indices(&self) -> Vec<usize> {
        (0..FEATURE_COUNT).filter(|&i| self.is_payload(i)).collect()
    }
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Coarsest label view: was the transaction an attack at all?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    Normal,
    Attack,
}

impl BinaryLabel {
    pub fn from_u8(value: u8) -> Result<Self, TaxonomyError> {
        match value {
            0 => Ok(BinaryLabel::Normal),
            1 => Ok(BinaryLabel::Attack),
            other => Err(TaxonomyError::InvalidBinary(other)),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            BinaryLabel::Normal => 0,
            BinaryLabel::Attack => 1,
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryLabel::Normal => write!(f, "Normal"),
            BinaryLabel::Attack => write!(f, "Attack"),
        }
    }
}

/// Middle label view: 0 = normal, 1..=7 = attack category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryLabel(u8);

impl CategoryLabel {
    pub const NORMAL: CategoryLabel = CategoryLabel(0);

    pub fn new(value: u8) -> Result<Self, TaxonomyError> {
        if value > CATEGORY_MAX {
            return Err(TaxonomyError::InvalidCategory(value));
        }
        Ok(CategoryLabel(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_normal(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Finest label view: 0 = normal, 1..=35 = attack subclass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubclassLabel(u8);

impl SubclassLabel {
    pub const NORMAL: SubclassLabel = SubclassLabel(0);

    pub fn new(value: u8) -> Result<Self, TaxonomyError> {
        if value > SUBCLASS_MAX {
            return Err(TaxonomyError::InvalidSubclass(value));
        }
        Ok(SubclassLabel(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_normal(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for SubclassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

/// Category number, acronym, and member subclasses. The subclass sets
/// partition 1..=35.
const CATEGORY_TABLE: [(u8, &str, &[u8]); CATEGORY_MAX as usize] = [
    (1, "NMRI", &[29, 30, 31, 32]),
    (2, "CMRI", &[25, 26, 27, 28, 33, 34, 35]),
    (3, "MSCI", &[13, 14, 15, 16, 17]),
    (4, "MPCI", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]),
    (5, "MFCI", &[19, 21, 22]),
    (6, "DoS", &[18]),
    (7, "Recon", &[20, 23, 24]),
];

/// The fixed subclass-to-category hierarchy.
#[derive(Debug)]
pub struct Taxonomy {
    to_category: [u8; SUBCLASS_MAX as usize + 1],
}

impl Taxonomy {
    /// Shared instance of the fixed hierarchy.
    pub fn shared() -> &'static Taxonomy {
        static TAXONOMY: OnceLock<Taxonomy> = OnceLock::new();
        TAXONOMY.get_or_init(|| {
            let mut to_category = [0u8; SUBCLASS_MAX as usize + 1];
            for (category, _, subclasses) in CATEGORY_TABLE {
                for &s in subclasses {
                    debug_assert_eq!(to_category[s as usize], 0, "subclass mapped twice");
                    to_category[s as usize] = category;
                }
            }
            debug_assert!(to_category[1..].iter().all(|&c| c != 0), "unmapped subclass");
            Taxonomy { to_category }
        })
    }

    /// Category owning an attack subclass. Subclass 0 (normal) has none.
    pub fn subclass_to_category(
        &self,
        subclass: SubclassLabel,
    ) -> Result<CategoryLabel, TaxonomyError> {
        if subclass.is_normal() {
            return Err(TaxonomyError::NormalHasNoCategory);
        }
        Ok(CategoryLabel(self.to_category[subclass.get() as usize]))
    }

    /// Member subclasses of an attack category, ascending. Empty for the
    /// normal label.
    pub fn category_subclasses(&self, category: CategoryLabel) -> &'static [u8] {
        CATEGORY_TABLE
            .iter()
            .find(|(c, _, _)| *c == category.get())
            .map(|(_, _, subclasses)| *subclasses)
            .unwrap_or(&[])
    }

    /// Acronym of an attack category ("NMRI", "CMRI", ...); "Normal" for 0.
    pub fn category_name(&self, category: CategoryLabel) -> &'static str {
        CATEGORY_TABLE
            .iter()
            .find(|(c, _, _)| *c == category.get())
            .map(|(_, name, _)| *name)
            .unwrap_or("Normal")
    }

    /// All attack categories, ascending.
    pub fn categories(&self) -> impl Iterator<Item = CategoryLabel> {
        (1..=CATEGORY_MAX).map(CategoryLabel)
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One transaction: feature values (None = missing) plus the three label
/// views. Labels must agree: binary 0 ⇔ category 0 ⇔ subclass 0, and an
/// attack subclass must belong to the stated category.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: [Option<f64>; FEATURE_COUNT],
    pub binary: BinaryLabel,
    pub category: CategoryLabel,
    pub subclass: SubclassLabel,
}

impl Record {
    /// A record with every feature present.
    pub fn complete(
        features: [f64; FEATURE_COUNT],
        binary: BinaryLabel,
        category: CategoryLabel,
        subclass: SubclassLabel,
    ) -> Record {
        Record { features: features.map(Some), binary, category, subclass }
    }

    pub fn is_complete(&self) -> bool {
        self.features.iter().all(|v| v.is_some())
    }
}

/// A single rule breach found by [`validate_record`].
#[derive(Debug, Clone, PartialEq)]
pub enum RecordViolation {
    /// The three label views disagree about whether this is an attack.
    LabelInconsistency { binary: u8, category: u8, subclass: u8 },
    /// The subclass is owned by a different category than the one stated.
    SubclassCategoryMismatch { subclass: u8, stated: u8, expected: u8 },
    /// A discrete feature holds a value outside its closed domain, or a
    /// numeric feature holds a non-finite value.
    ValueOutOfDomain { feature: &'static str, value: f64 },
    /// Network features are always observed; a hole here means a malformed
    /// capture rather than a lost payload.
    MissingNetworkValue { feature: &'static str },
}

impl fmt::Display for RecordViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordViolation::LabelInconsistency { binary, category, subclass } => write!(
                f,
                "labels disagree: binary={binary}, category={category}, subclass={subclass}"
            ),
            RecordViolation::SubclassCategoryMismatch { subclass, stated, expected } => {
                write!(f, "subclass {subclass} belongs to category {expected}, not {stated}")
            }
            RecordViolation::ValueOutOfDomain { feature, value } => {
                write!(f, "{feature} = {value} is outside the declared domain")
            }
            RecordViolation::MissingNetworkValue { feature } => {
                write!(f, "network feature {feature} is missing")
            }
        }
    }
}

/// Check a record against the schema and label-consistency rules. An empty
/// result means the record is well formed.
pub fn validate_record(record: &Record, schema: &FeatureSchema) -> Vec<RecordViolation> {
    let mut violations = Vec::new();

    let b = record.binary.as_u8();
    let c = record.category.get();
    let s = record.subclass.get();
    let consistent = (b == 0) == (c == 0) && (b == 0) == (s == 0);
    if !consistent {
        violations.push(RecordViolation::LabelInconsistency {
            binary: b,
            category: c,
            subclass: s,
        });
    }
    if s != 0 {
        let expected = Taxonomy::shared().to_category[s as usize];
        if c != expected && c != 0 {
            violations.push(RecordViolation::SubclassCategoryMismatch {
                subclass: s,
                stated: c,
                expected,
            });
        }
    }

    for (index, descriptor) in schema.iter().enumerate() {
        match record.features[index] {
            Some(value) => {
                if !descriptor.kind.admits(value) {
                    violations.push(RecordViolation::ValueOutOfDomain {
                        feature: descriptor.name,
                        value,
                    });
                }
            }
            None => {
                if descriptor.group == Network {
                    violations
                        .push(RecordViolation::MissingNetworkValue { feature: descriptor.name });
                }
            }
        }
    }

    violations
}
