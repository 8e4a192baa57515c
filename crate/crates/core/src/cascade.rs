//! The three-stage classification cascade.
//!
//! Stage 1 decides normal vs. attack on every record. Records flagged as
//! attacks go to stage 2, which assigns one of the seven attack categories.
//! Stage 3 holds one subclass model per category — except denial of
//! service, whose single subclass is implied by the category itself, so
//! those records pass through without a third model. Later stages never
//! see records that earlier stages filtered out, which is what makes the
//! staged design cheaper than one flat 36-way classifier.
//!
//! Evaluation comes in two forms. *Ground-truth routing* scores each stage
//! on the records that stage would see under a perfect upstream (stage 2
//! on all true attacks, stage 3 on each true category), isolating every
//! stage's own confusion. *End-to-end* scores the composed pipeline on the
//! final subclass output, so upstream mistakes propagate.

use crate::forest::{train_forest, Forest, ForestError, TrainConfig};
use crate::ingest::Dataset;
use crate::metrics::{ConfusionMatrix, EvalSemantics, MetricsError, StageReport};
use crate::taxonomy::{CategoryLabel, SubclassLabel, Taxonomy, FEATURE_COUNT, TAXONOMY_VERSION};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// The category whose records skip stage 3: denial of service has exactly
/// one subclass, so detection plus categorization already identifies it.
const PASSTHROUGH_CATEGORY: u8 = 6;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("record {row} has missing values; impute the dataset before using it here")]
    IncompleteRecord { row: usize },
    #[error("{stage}: {source}")]
    Stage { stage: String, source: ForestError },
    #[error(transparent)]
    Model(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported cascade manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("model was built for taxonomy {found:?}, this build expects {expected:?}")]
    TaxonomyMismatch { expected: String, found: String },
    #[error("stored cascade is inconsistent: {0}")]
    MalformedCascade(String),
}

/// Feature rows and labels for one training problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

/// The per-stage training sets derived from one labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDatasets {
    /// Every record, labeled normal (0) or attack (1).
    pub stage1: StageData,
    /// Attack records only, labeled by category (1..=7).
    pub stage2: StageData,
    /// Attack records of each category, labeled by subclass — one entry
    /// per category that occurs in the data, except denial of service.
    pub stage3: BTreeMap<u8, StageData>,
    /// Denial-of-service records (category present but trained nowhere in
    /// stage 3).
    pub passthrough_rows: usize,
}

/// Population sizes per stage, for run logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePopulations {
    pub total: usize,
    pub attacks: usize,
    pub per_category: BTreeMap<u8, usize>,
    pub passthrough_rows: usize,
}

impl StageDatasets {
    pub fn populations(&self) -> StagePopulations {
        let mut per_category: BTreeMap<u8, usize> =
            self.stage3.iter().map(|(&c, data)| (c, data.rows.len())).collect();
        if self.passthrough_rows > 0 {
            per_category.insert(PASSTHROUGH_CATEGORY, self.passthrough_rows);
        }
        StagePopulations {
            total: self.stage1.rows.len(),
            attacks: self.stage2.rows.len(),
            per_category,
            passthrough_rows: self.passthrough_rows,
        }
    }
}

fn complete_rows(dataset: &Dataset) -> Result<Vec<Vec<f64>>, CascadeError> {
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(row, record)| {
            record
                .features
                .iter()
                .map(|value| value.ok_or(CascadeError::IncompleteRecord { row }))
                .collect()
        })
        .collect()
}

/// Split one complete dataset into the three stages' training sets.
/// Categories that never occur simply have no stage-3 entry.
pub fn derive_stage_datasets(dataset: &Dataset) -> Result<StageDatasets, CascadeError> {
    let rows = complete_rows(dataset)?;

    let mut stage1 = StageData { rows: Vec::with_capacity(rows.len()), labels: Vec::new() };
    let mut stage2 = StageData { rows: Vec::new(), labels: Vec::new() };
    let mut stage3: BTreeMap<u8, StageData> = BTreeMap::new();
    let mut passthrough_rows = 0usize;

    for (record, row) in dataset.records.iter().zip(rows) {
        stage1.labels.push(u32::from(record.binary.as_u8()));
        let category = record.category.get();
        if category != 0 {
            stage2.rows.push(row.clone());
            stage2.labels.push(u32::from(category));
            if category == PASSTHROUGH_CATEGORY {
                passthrough_rows += 1;
            } else {
                let entry = stage3
                    .entry(category)
                    .or_insert_with(|| StageData { rows: Vec::new(), labels: Vec::new() });
                entry.rows.push(row.clone());
                entry.labels.push(u32::from(record.subclass.get()));
            }
        }
        stage1.rows.push(row);
    }

    Ok(StageDatasets { stage1, stage2, stage3, passthrough_rows })
}

/// Per-stage training configurations. The defaults differ only in the
/// prediction batch sizes, which shrink as the population thins out per
/// stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfigs {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        StageConfigs {
            stage1: TrainConfig { batch_size: 1000, ..TrainConfig::default() },
            stage2: TrainConfig { batch_size: 100, ..TrainConfig::default() },
            stage3: TrainConfig { batch_size: 10, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Default)]
struct InvocationCounters {
    stage1: AtomicU64,
    stage2: AtomicU64,
    stage3: AtomicU64,
}

/// How many records each stage has classified since the model was created
/// (or the counters were reset). Demonstrates the cascade's early exits:
/// stage 2 only ever sees records stage 1 flagged, and stage 3 additionally
/// excludes the passthrough category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationCounts {
    pub stage1: u64,
    pub stage2: u64,
    pub stage3: u64,
}

/// A trained cascade: the detection model, the categorization model, and
/// one subclass model per trained category.
#[derive(Debug)]
pub struct CascadeModel {
    stage1: Forest,
    stage2: Forest,
    stage3: BTreeMap<u8, Forest>,
    counters: InvocationCounters,
}

/// Train all stages. Stage-3 models derive their seeds from the stage-3
/// configuration seed plus the category number, so no two categories train
/// identically by accident.
pub fn train_cascade(
    dataset: &Dataset,
    configs: &StageConfigs,
) -> Result<CascadeModel, CascadeError> {
    let stages = derive_stage_datasets(dataset)?;
    let taxonomy = Taxonomy::shared();

    let in_stage = |stage: String| move |source| CascadeError::Stage { stage, source };
    let stage1 = train_forest(&stages.stage1.rows, &stages.stage1.labels, &configs.stage1)
        .map_err(in_stage("stage 1 (attack detection)".into()))?;
    let stage2 = train_forest(&stages.stage2.rows, &stages.stage2.labels, &configs.stage2)
        .map_err(in_stage("stage 2 (category identification)".into()))?;

    let mut stage3 = BTreeMap::new();
    for (&category, data) in &stages.stage3 {
        let config = TrainConfig {
            seed: configs.stage3.seed.wrapping_add(u64::from(category)),
            ..configs.stage3.clone()
        };
        let name = taxonomy
            .category_name(CategoryLabel::new(category).expect("categories come from records"));
        let forest = train_forest(&data.rows, &data.labels, &config)
            .map_err(in_stage(format!("stage 3 ({name} subclass identification)")))?;
        stage3.insert(category, forest);
    }

    Ok(CascadeModel { stage1, stage2, stage3, counters: InvocationCounters::default() })
}

impl CascadeModel {
    pub fn stage1(&self) -> &Forest {
        &self.stage1
    }

    pub fn stage2(&self) -> &Forest {
        &self.stage2
    }

    pub fn stage3(&self, category: u8) -> Option<&Forest> {
        self.stage3.get(&category)
    }

    pub fn stage3_categories(&self) -> Vec<u8> {
        self.stage3.keys().copied().collect()
    }

    pub fn invocation_counts(&self) -> InvocationCounts {
        InvocationCounts {
            stage1: self.counters.stage1.load(Ordering::Relaxed),
            stage2: self.counters.stage2.load(Ordering::Relaxed),
            stage3: self.counters.stage3.load(Ordering::Relaxed),
        }
    }

    pub fn reset_invocation_counts(&self) {
        self.counters.stage1.store(0, Ordering::Relaxed);
        self.counters.stage2.store(0, Ordering::Relaxed);
        self.counters.stage3.store(0, Ordering::Relaxed);
    }

    /// Classify one complete record: normal, or the identified attack
    /// subclass. Records judged normal exit after stage 1; attacks
    /// categorized as denial of service skip stage 3.
    pub fn classify(&self, row: &[f64]) -> SubclassLabel {
        self.counters.stage1.fetch_add(1, Ordering::Relaxed);
        if self.stage1.predict(row) == 0 {
            return SubclassLabel::NORMAL;
        }
        self.counters.stage2.fetch_add(1, Ordering::Relaxed);
        let category = self.stage2.predict(row) as u8;
        if category == PASSTHROUGH_CATEGORY {
            let subclasses = Taxonomy::shared()
                .category_subclasses(CategoryLabel::new(category).expect("trained category"));
            return SubclassLabel::new(subclasses[0]).expect("taxonomy subclass");
        }
        self.counters.stage3.fetch_add(1, Ordering::Relaxed);
        let model = self.stage3.get(&category).expect("validated: model per trained category");
        SubclassLabel::new(model.predict(row) as u8).expect("subclass label space")
    }

    /// Classify a whole dataset (rows must be complete); output order
    /// matches record order.
    pub fn classify_dataset(&self, dataset: &Dataset) -> Result<Vec<SubclassLabel>, CascadeError> {
        let rows = complete_rows(dataset)?;
        Ok(rows.iter().map(|row| self.classify(row)).collect())
    }

    /// Score each stage on ground-truth-routed populations: stage 1 on all
    /// records, stage 2 on the true attacks, stage 3 on each true category
    /// present (the passthrough category trivially scores by its implied
    /// subclass). Stages with no records to score are omitted.
    pub fn evaluate_stagewise(&self, dataset: &Dataset) -> Result<Vec<StageReport>, CascadeError> {
        let rows = complete_rows(dataset)?;
        let taxonomy = Taxonomy::shared();
        let mut reports = Vec::new();

        let truth1: Vec<u32> =
            dataset.records.iter().map(|r| u32::from(r.binary.as_u8())).collect();
        let predicted1: Vec<u32> = rows.iter().map(|row| self.stage1.predict(row)).collect();
        let matrix = ConfusionMatrix::from_pairs(&truth1, &predicted1, &[0, 1])?
            .with_names(vec!["Normal", "Attack"]);
        reports.push(StageReport::new(
            "stage 1: attack detection",
            EvalSemantics::GroundTruthRouted,
            matrix,
        )?);

        let attack_rows: Vec<usize> = dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.category.get() != 0)
            .map(|(i, _)| i)
            .collect();
        if !attack_rows.is_empty() {
            let truth2: Vec<u32> =
                attack_rows.iter().map(|&i| u32::from(dataset.records[i].category.get())).collect();
            let predicted2: Vec<u32> =
                attack_rows.iter().map(|&i| self.stage2.predict(&rows[i])).collect();
            let labels: Vec<u32> = taxonomy.categories().map(|c| u32::from(c.get())).collect();
            let names: Vec<String> =
                taxonomy.categories().map(|c| taxonomy.category_name(c).to_string()).collect();
            let matrix =
                ConfusionMatrix::from_pairs(&truth2, &predicted2, &labels)?.with_names(names);
            reports.push(StageReport::new(
                "stage 2: category identification",
                EvalSemantics::GroundTruthRouted,
                matrix,
            )?);
        }

        for category in taxonomy.categories() {
            let members: Vec<usize> = attack_rows
                .iter()
                .copied()
                .filter(|&i| dataset.records[i].category == category)
                .collect();
            if members.is_empty() {
                continue;
            }
            let truth: Vec<u32> =
                members.iter().map(|&i| u32::from(dataset.records[i].subclass.get())).collect();
            let predicted: Vec<u32> = if category.get() == PASSTHROUGH_CATEGORY {
                let implied = u32::from(taxonomy.category_subclasses(category)[0]);
                vec![implied; members.len()]
            } else {
                let Some(model) = self.stage3.get(&category.get()) else {
                    return Err(CascadeError::MalformedCascade(format!(
                        "no stage 3 model for category {category} present in the evaluation data"
                    )));
                };
                members.iter().map(|&i| model.predict(&rows[i])).collect()
            };
            let labels: Vec<u32> =
                taxonomy.category_subclasses(category).iter().map(|&s| u32::from(s)).collect();
            let names = subclass_names(taxonomy.category_subclasses(category));
            let matrix =
                ConfusionMatrix::from_pairs(&truth, &predicted, &labels)?.with_names(names);
            reports.push(StageReport::new(
                format!("stage 3: {} subclass identification", taxonomy.category_name(category)),
                EvalSemantics::GroundTruthRouted,
                matrix,
            )?);
        }

        Ok(reports)
    }

    /// Score the composed pipeline on its final output: the full subclass
    /// space (normal plus all 35 attack subclasses), with upstream
    /// mistakes propagating downstream.
    pub fn evaluate_end_to_end(&self, dataset: &Dataset) -> Result<StageReport, CascadeError> {
        let truth: Vec<u32> = dataset.records.iter().map(|r| u32::from(r.subclass.get())).collect();
        let predicted: Vec<u32> = self
            .classify_dataset(dataset)?
            .iter()
            .map(|subclass| u32::from(subclass.get()))
            .collect();
        let all: Vec<u8> = (0..=35).collect();
        let labels: Vec<u32> = all.iter().map(|&s| u32::from(s)).collect();
        let matrix = ConfusionMatrix::from_pairs(&truth, &predicted, &labels)?
            .with_names(subclass_names(&all));
        Ok(StageReport::new("end-to-end identification", EvalSemantics::EndToEnd, matrix)?)
    }

    /// Write the cascade into a directory: one model file per stage plus a
    /// manifest tying them together.
    pub fn save(&self, dir: &Path) -> Result<(), CascadeError> {
        std::fs::create_dir_all(dir)?;
        let write_forest = |name: &str, forest: &Forest| -> Result<(), CascadeError> {
            let file = File::create(dir.join(name))?;
            forest.save(BufWriter::new(file))?;
            Ok(())
        };

        write_forest("stage1.model.json", &self.stage1)?;
        write_forest("stage2.model.json", &self.stage2)?;
        let mut stage3 = BTreeMap::new();
        for (&category, forest) in &self.stage3 {
            let name = format!("stage3_category{category}.model.json");
            write_forest(&name, forest)?;
            stage3.insert(category, name);
        }

        let manifest = CascadeManifest {
            version: CASCADE_DOC_VERSION,
            taxonomy_version: TAXONOMY_VERSION.to_string(),
            stage1: "stage1.model.json".to_string(),
            stage2: "stage2.model.json".to_string(),
            stage3,
        };
        let file = File::create(dir.join("cascade.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(())
    }

    /// Load a cascade saved by [`CascadeModel::save`], verifying the
    /// manifest version, the taxonomy the model was built for, and that
    /// every stage's label space fits its role.
    pub fn load(dir: &Path) -> Result<CascadeModel, CascadeError> {
        let manifest: CascadeManifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join("cascade.json"))?))?;
        if manifest.version != CASCADE_DOC_VERSION {
            return Err(CascadeError::UnsupportedVersion(manifest.version));
        }
        if manifest.taxonomy_version != TAXONOMY_VERSION {
            return Err(CascadeError::TaxonomyMismatch {
                expected: TAXONOMY_VERSION.to_string(),
                found: manifest.taxonomy_version,
            });
        }

        let read_forest = |name: &str| -> Result<Forest, CascadeError> {
            let forest = Forest::load(BufReader::new(File::open(dir.join(name))?))?;
            if forest.feature_count() != FEATURE_COUNT {
                return Err(CascadeError::MalformedCascade(format!(
                    "{name}: expects {} features, records have {FEATURE_COUNT}",
                    forest.feature_count()
                )));
            }
            Ok(forest)
        };
        let taxonomy = Taxonomy::shared();
        let subset = |space: &[u32], allowed: &[u32]| space.iter().all(|l| allowed.contains(l));

        let stage1 = read_forest(&manifest.stage1)?;
        if !subset(stage1.label_space(), &[0, 1]) {
            return Err(CascadeError::MalformedCascade(
                "stage 1 labels are not the normal/attack pair".into(),
            ));
        }
        let stage2 = read_forest(&manifest.stage2)?;
        let categories: Vec<u32> = taxonomy.categories().map(|c| u32::from(c.get())).collect();
        if !subset(stage2.label_space(), &categories) {
            return Err(CascadeError::MalformedCascade(
                "stage 2 labels are not attack categories".into(),
            ));
        }

        let mut stage3 = BTreeMap::new();
        for (&category, name) in &manifest.stage3 {
            let Ok(label) = CategoryLabel::new(category) else {
                return Err(CascadeError::MalformedCascade(format!(
                    "stage 3 entry for nonexistent category {category}"
                )));
            };
            if category == 0 || category == PASSTHROUGH_CATEGORY {
                return Err(CascadeError::MalformedCascade(format!(
                    "stage 3 must not contain a model for category {category}"
                )));
            }
            let forest = read_forest(name)?;
            let allowed: Vec<u32> =
                taxonomy.category_subclasses(label).iter().map(|&s| u32::from(s)).collect();
            if !subset(forest.label_space(), &allowed) {
                return Err(CascadeError::MalformedCascade(format!(
                    "stage 3 model for category {category} predicts foreign subclasses"
                )));
            }
            stage3.insert(category, forest);
        }

        // Every category stage 2 can emit must be classifiable downstream.
        for &label in stage2.label_space() {
            let category = label as u8;
            if category != PASSTHROUGH_CATEGORY && !stage3.contains_key(&category) {
                return Err(CascadeError::MalformedCascade(format!(
                    "stage 2 can emit category {category} but no stage 3 model covers it"
                )));
            }
        }

        Ok(CascadeModel { stage1, stage2, stage3, counters: InvocationCounters::default() })
    }
}

fn subclass_names(subclasses: &[u8]) -> Vec<String> {
    let taxonomy = Taxonomy::shared();
    subclasses
        .iter()
        .map(|&s| {
            if s == 0 {
                "Normal".to_string()
            } else {
                let subclass = SubclassLabel::new(s).expect("taxonomy subclass");
                let category = taxonomy.subclass_to_category(subclass).expect("attack subclass");
                format!("{} {s}", taxonomy.category_name(category))
            }
        })
        .collect()
}

const CASCADE_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CascadeManifest {
    version: u32,
    taxonomy_version: String,
    stage1: String,
    stage2: String,
    stage3: BTreeMap<u8, String>,
}
