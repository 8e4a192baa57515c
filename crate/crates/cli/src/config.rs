//! Configuration files and seed derivation.
//!
//! Two file formats live here: the pipeline config (shared by every verb,
//! passed with `--config`) and the synthesis spec consumed by `synth`.
//! Both are versioned TOML. Precedence everywhere is: command-line flag,
//! then the `GASGUARD_OUT` environment variable (output directory only),
//! then the config file, then built-in defaults.
//!
//! Seeds: a single master seed (the `--seed` flag, falling back to
//! `master_seed` in the config, falling back to 0) derives every stage
//! seed by a fixed offset — imputation +1, splitting +2, the three
//! cascade stages +3/+4/+5 — so one knob reproduces a whole run. A
//! per-stage `seed` key in the config pins that stage regardless of the
//! master seed.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use gasguard::cascade::StageConfigs;
use gasguard::forest::TrainConfig;
use gasguard::impute::ImputationConfig;
use gasguard::ingest::SynthesisSpec;
use gasguard::metrics::ReportFormat;
use gasguard::taxonomy::{FeatureSchema, SubclassLabel};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

/// Seed offsets from the master seed, one per derived stream.
pub mod seed_offset {
    pub const IMPUTE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const STAGE1: u64 = 3;
    pub const STAGE2: u64 = 4;
    pub const STAGE3: u64 = 5;
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: Option<u32>,
    /// Default input dataset for `impute`, `split`, `train`, and `eval`.
    pub dataset: Option<PathBuf>,
    /// Default output directory (lowest precedence).
    pub out: Option<PathBuf>,
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub impute: ImputeSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeSection {
    pub chain_iterations: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub stage1: StageSection,
    #[serde(default)]
    pub stage2: StageSection,
    #[serde(default)]
    pub stage3: StageSection,
}

/// Overrides for one stage's training knobs; anything absent keeps the
/// stage's built-in default (100 trees, `⌊log₂ F⌋ + 1` features per node,
/// bootstrap on, batch hints 1000/100/10).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub trees: Option<usize>,
    pub max_features: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: Option<bool>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub semantics: Option<SemanticsArg>,
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticsArg {
    /// Score each stage on its ground-truth-routed population.
    Stagewise,
    /// Score the composed pipeline on the full 36-label space.
    End2end,
    Both,
}

impl SemanticsArg {
    pub fn as_str(self) -> &'static str {
        match self {
            SemanticsArg::Stagewise => "stagewise",
            SemanticsArg::End2end => "end2end",
            SemanticsArg::Both => "both",
        }
    }

    pub fn wants_stagewise(self) -> bool {
        matches!(self, SemanticsArg::Stagewise | SemanticsArg::Both)
    }

    pub fn wants_end_to_end(self) -> bool {
        matches!(self, SemanticsArg::End2end | SemanticsArg::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Text,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(value: FormatArg) -> ReportFormat {
        match value {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

/// The config file combined with the command line, ready to answer
/// concrete questions.
pub struct Settings {
    pub file: ConfigFile,
    pub master_seed: u64,
}

impl Settings {
    pub fn resolve(config_path: Option<&Path>, seed_flag: Option<u64>) -> Result<Settings> {
        let file = match config_path {
            None => ConfigFile::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: ConfigFile = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                match file.version {
                    Some(CONFIG_VERSION) => {}
                    Some(other) => bail!(
                        "config {}: unsupported version {other} (this build reads version {CONFIG_VERSION})",
                        path.display()
                    ),
                    None => bail!(
                        "config {}: missing `version` key (expected version = {CONFIG_VERSION})",
                        path.display()
                    ),
                }
                file
            }
        };
        let master_seed = seed_flag.or(file.master_seed).unwrap_or(0);
        Ok(Settings { file, master_seed })
    }

    /// Output directory: `--out` flag, then `GASGUARD_OUT`, then the
    /// config's `out` key.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| std::env::var_os("GASGUARD_OUT").map(PathBuf::from))
            .or_else(|| self.file.out.clone())
            .context(
                "no output directory: pass --out, set GASGUARD_OUT, or set `out` in the config",
            )
    }

    /// Input dataset: the given flag, then the config's `dataset` key.
    pub fn input_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.file.dataset.clone())
            .context("no input dataset: pass the path flag or set `dataset` in the config")
    }

    pub fn impute_config(&self) -> ImputationConfig {
        let mut config = ImputationConfig::default();
        let section = &self.file.impute;
        if let Some(iterations) = section.chain_iterations {
            config.chain_iterations = iterations;
        }
        config.seed = section.seed.unwrap_or(self.master_seed.wrapping_add(seed_offset::IMPUTE));
        config
    }

    pub fn split_seed(&self) -> u64 {
        self.file.split.seed.unwrap_or(self.master_seed.wrapping_add(seed_offset::SPLIT))
    }

    pub fn stage_configs(&self) -> StageConfigs {
        let defaults = StageConfigs::default();
        let stage = |section: &StageSection, base: TrainConfig, offset: u64| -> TrainConfig {
            TrainConfig {
                tree_count: section.trees.unwrap_or(base.tree_count),
                max_features: section.max_features.or(base.max_features),
                min_samples_leaf: section.min_samples_leaf.unwrap_or(base.min_samples_leaf),
                max_depth: section.max_depth.or(base.max_depth),
                bootstrap: section.bootstrap.unwrap_or(base.bootstrap),
                seed: section.seed.unwrap_or(self.master_seed.wrapping_add(offset)),
                batch_size: section.batch_size.unwrap_or(base.batch_size),
            }
        };
        StageConfigs {
            stage1: stage(&self.file.train.stage1, defaults.stage1, seed_offset::STAGE1),
            stage2: stage(&self.file.train.stage2, defaults.stage2, seed_offset::STAGE2),
            stage3: stage(&self.file.train.stage3, defaults.stage3, seed_offset::STAGE3),
        }
    }

    pub fn semantics(&self, flag: Option<SemanticsArg>) -> SemanticsArg {
        flag.or(self.file.eval.semantics).unwrap_or(SemanticsArg::Both)
    }

    pub fn format(&self, flag: Option<FormatArg>) -> FormatArg {
        flag.or(self.file.eval.format).unwrap_or(FormatArg::Text)
    }
}

// ---------------------------------------------------------------------------
// Synthesis spec file.
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecFile {
    pub version: u32,
    pub seed: Option<u64>,
    /// Scale the original corpus class balance down by this divisor.
    /// Mutually exclusive with explicit `[counts]`.
    pub scale_divisor: Option<u32>,
    /// Records per subclass label ("0" = normal, "1"–"35" = attacks).
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    /// Per-cell drop probability by feature name (payload features only).
    #[serde(default)]
    pub missing: BTreeMap<String, f64>,
    /// Collapse one response-injection band per category onto a shared
    /// pressure range, making those subclasses harder to separate.
    #[serde(default)]
    pub pressure_overlap: bool,
    /// Replace every pressure band with `factor × set point`, planting a
    /// linear relation the imputation stage can be tested against.
    pub linked_pressure_factor: Option<f64>,
}

impl SynthSpecFile {
    pub fn load(path: &Path) -> Result<SynthSpecFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading synthesis spec {}", path.display()))?;
        let file: SynthSpecFile = toml::from_str(&text)
            .with_context(|| format!("parsing synthesis spec {}", path.display()))?;
        if file.version != CONFIG_VERSION {
            bail!(
                "synthesis spec {}: unsupported version {} (this build reads version {CONFIG_VERSION})",
                path.display(),
                file.version
            );
        }
        if file.scale_divisor.is_some() && !file.counts.is_empty() {
            bail!("synthesis spec: choose either `scale_divisor` or explicit `[counts]`, not both");
        }
        if file.scale_divisor == Some(0) {
            bail!("synthesis spec: `scale_divisor` must be at least 1");
        }
        Ok(file)
    }

    /// Build the generator spec. `seed_flag` (the `--seed` flag) overrides
    /// the file's seed.
    pub fn to_spec(&self, seed_flag: Option<u64>) -> Result<(SynthesisSpec, u64)> {
        let seed = seed_flag.or(self.seed).unwrap_or(0);
        let mut spec = match self.scale_divisor {
            Some(divisor) => SynthesisSpec::corpus_proportions(divisor, seed),
            None => {
                let mut counts = BTreeMap::new();
                for (key, &count) in &self.counts {
                    let label: u8 = key
                        .parse()
                        .ok()
                        .and_then(|v| SubclassLabel::new(v).ok())
                        .with_context(|| {
                            format!("synthesis spec: `counts` key {key:?} is not a subclass label (0–35)")
                        })?
                        .get();
                    counts.insert(label, count);
                }
                SynthesisSpec::separable(counts, seed)
            }
        };
        if self.pressure_overlap {
            spec = spec.with_pressure_overlap();
        }
        if let Some(factor) = self.linked_pressure_factor {
            spec = spec.with_linked_pressure(factor);
        }
        let schema = FeatureSchema::gas_pipeline();
        for (name, &rate) in &self.missing {
            let index = schema.index_of(name).with_context(|| {
                format!("synthesis spec: unknown feature name {name:?} in `[missing]`")
            })?;
            spec = spec.with_missing_rate(index, rate);
        }
        Ok((spec, seed))
    }
}
