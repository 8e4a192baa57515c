//! One function per verb. Every command writes its outputs plus a JSON
//! manifest sufficient to re-run it, and succeeds (exit 0) only once all
//! of them are on disk.

use crate::config::{FormatArg, SemanticsArg, Settings, SynthSpecFile};
use anyhow::{bail, Context, Result};
use gasguard::cascade::{train_cascade, CascadeModel, InvocationCounts, StagePopulations};
use gasguard::forest::TrainConfig;
use gasguard::impute::{detect_missing, mice_impute};
use gasguard::ingest::{generate_synthetic, load_dataset, write_dataset, Dataset};
use gasguard::metrics::{combined_two_stage, render_report, write_report, StageReport};
use gasguard::partition::{make_folds, stratified_split3, write_indices, Fold};
use gasguard::taxonomy::FeatureSchema;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

const MANIFEST_VERSION: u32 = 1;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    load_dataset(BufReader::new(file), FeatureSchema::gas_pipeline())
        .with_context(|| format!("loading dataset {}", path.display()))
}

fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_dataset(dataset, BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SynthManifest {
    version: u32,
    seed: u64,
    rows: usize,
    subclass_counts: BTreeMap<u8, usize>,
    scale_divisor: Option<u32>,
    pressure_overlap: bool,
    linked_pressure_factor: Option<f64>,
    missing: BTreeMap<String, f64>,
}

pub fn cmd_synth(
    settings: &Settings,
    spec_path: &Path,
    out: Option<PathBuf>,
    seed_flag: Option<u64>,
) -> Result<()> {
    let spec_file = SynthSpecFile::load(spec_path)?;
    let (spec, seed) = spec_file.to_spec(seed_flag)?;
    let dataset = generate_synthetic(&spec).context("generating synthetic dataset")?;

    let out = settings.out_dir(out)?;
    create_dir(&out)?;
    write_csv(&dataset, &out.join("dataset.csv"))?;
    write_json(
        &out.join("synth_manifest.json"),
        &SynthManifest {
            version: MANIFEST_VERSION,
            seed,
            rows: dataset.len(),
            subclass_counts: dataset.subclass_histogram(),
            scale_divisor: spec_file.scale_divisor,
            pressure_overlap: spec_file.pressure_overlap,
            linked_pressure_factor: spec_file.linked_pressure_factor,
            missing: spec_file.missing.clone(),
        },
    )?;
    writeln!(
        std::io::stdout(),
        "wrote {} records to {}",
        dataset.len(),
        out.join("dataset.csv").display()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// impute
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ImputeManifest {
    version: u32,
    input: String,
    rows: usize,
    chain_iterations: usize,
    seed: u64,
    filled_by_feature: BTreeMap<String, usize>,
    total_filled: usize,
}

pub fn cmd_impute(settings: &Settings, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let input = settings.input_path(input)?;
    let dataset = load_csv(&input)?;
    let mask = detect_missing(&dataset);
    let schema = FeatureSchema::gas_pipeline();
    let filled_by_feature: BTreeMap<String, usize> = mask
        .rows_by_feature
        .iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(feature, rows)| (schema.descriptor(feature).name.to_string(), rows.len()))
        .collect();

    let config = settings.impute_config();
    let imputed = mice_impute(&dataset, &config).context("imputing missing values")?;

    let out = settings.out_dir(out)?;
    create_dir(&out)?;
    write_csv(&imputed, &out.join("imputed.csv"))?;
    write_json(
        &out.join("impute_manifest.json"),
        &ImputeManifest {
            version: MANIFEST_VERSION,
            input: input.display().to_string(),
            rows: imputed.len(),
            chain_iterations: config.chain_iterations,
            seed: config.seed,
            total_filled: mask.total(),
            filled_by_feature,
        },
    )?;
    writeln!(
        std::io::stdout(),
        "filled {} missing cells across {} records; wrote {}",
        mask.total(),
        imputed.len(),
        out.join("imputed.csv").display()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

/// Versioned wrapper around a stored fold, so `train`/`eval` can reject
/// foreign files.
#[derive(Serialize, Deserialize)]
pub struct FoldDocument {
    pub version: u32,
    #[serde(flatten)]
    pub fold: Fold,
}

impl FoldDocument {
    pub fn load(path: &Path) -> Result<FoldDocument> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading fold manifest {}", path.display()))?;
        let doc: FoldDocument = serde_json::from_str(&text)
            .with_context(|| format!("parsing fold manifest {}", path.display()))?;
        if doc.version != MANIFEST_VERSION {
            bail!(
                "fold manifest {}: unsupported version {} (this build reads version {MANIFEST_VERSION})",
                path.display(),
                doc.version
            );
        }
        Ok(doc)
    }

    /// The fold must address rows that exist in the dataset it is paired
    /// with; a mismatch means the wrong data file was passed.
    pub fn check_against(&self, dataset: &Dataset, data_path: &Path) -> Result<()> {
        let rows = dataset.len();
        for &index in self.fold.train.iter().chain(&self.fold.test) {
            if index >= rows {
                bail!(
                    "fold references row {index} but {} has only {rows} rows; \
                     was it built from a different dataset?",
                    data_path.display()
                );
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct FoldSizes {
    index: usize,
    train_rows: usize,
    test_rows: usize,
}

#[derive(Serialize)]
struct SplitManifest {
    version: u32,
    input: String,
    seed: u64,
    rows: usize,
    split_sizes: [usize; 3],
    folds: Vec<FoldSizes>,
}

pub fn cmd_split(settings: &Settings, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let input = settings.input_path(input)?;
    let dataset = load_csv(&input)?;
    let seed = settings.split_seed();
    let splits = stratified_split3(&dataset, seed);
    let folds = make_folds(dataset.len(), &splits).context("deriving folds from the splits")?;

    let out = settings.out_dir(out)?;
    create_dir(&out)?;
    for (k, split) in splits.iter().enumerate() {
        let path = out.join(format!("split{k}.idx"));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_indices(split, BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    for fold in &folds {
        write_json(
            &out.join(format!("fold{}.json", fold.index)),
            &FoldDocument { version: MANIFEST_VERSION, fold: fold.clone() },
        )?;
    }
    write_json(
        &out.join("split_manifest.json"),
        &SplitManifest {
            version: MANIFEST_VERSION,
            input: input.display().to_string(),
            seed,
            rows: dataset.len(),
            split_sizes: [splits[0].len(), splits[1].len(), splits[2].len()],
            folds: folds
                .iter()
                .map(|f| FoldSizes {
                    index: f.index,
                    train_rows: f.train.len(),
                    test_rows: f.test.len(),
                })
                .collect(),
        },
    )?;
    writeln!(
        std::io::stdout(),
        "split {} records into {}/{}/{}; wrote 3 splits and 3 folds to {}",
        dataset.len(),
        splits[0].len(),
        splits[1].len(),
        splits[2].len(),
        out.display()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn dataset_view(dataset: &Dataset, indices: &[usize]) -> Dataset {
    Dataset::new(indices.iter().map(|&i| dataset.records[i].clone()).collect(), dataset.provenance)
}

#[derive(Serialize)]
struct TrainingLog {
    version: u32,
    data: String,
    fold: String,
    fold_index: usize,
    train_rows: usize,
    populations: StagePopulations,
    stage1: TrainConfig,
    stage2: TrainConfig,
    stage3: TrainConfig,
}

pub fn cmd_train(
    settings: &Settings,
    data: Option<PathBuf>,
    fold_path: &Path,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = settings.input_path(data)?;
    let dataset = load_csv(&data)?;
    let fold = FoldDocument::load(fold_path)?;
    fold.check_against(&dataset, &data)?;
    let train_view = dataset_view(&dataset, &fold.fold.train);

    let configs = settings.stage_configs();
    let model = train_cascade(&train_view, &configs).context("training the cascade")?;
    let populations = gasguard::cascade::derive_stage_datasets(&train_view)
        .context("deriving stage populations")?
        .populations();

    let out = settings.out_dir(out)?;
    let model_dir = out.join("model");
    create_dir(&model_dir)?;
    model
        .save(&model_dir)
        .with_context(|| format!("saving the cascade to {}", model_dir.display()))?;
    write_json(
        &out.join("training_log.json"),
        &TrainingLog {
            version: MANIFEST_VERSION,
            data: data.display().to_string(),
            fold: fold_path.display().to_string(),
            fold_index: fold.fold.index,
            train_rows: train_view.len(),
            populations,
            stage1: configs.stage1,
            stage2: configs.stage2,
            stage3: configs.stage3,
        },
    )?;
    writeln!(
        std::io::stdout(),
        "trained on {} records (fold {}); model in {}",
        train_view.len(),
        fold.fold.index,
        model_dir.display()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SummaryRow {
    name: String,
    accuracy: f64,
    correct: u64,
    incorrect: u64,
    file: String,
}

#[derive(Serialize)]
struct CombinedSummary {
    stage1_accuracy: f64,
    stage2_accuracy: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
}

#[derive(Serialize)]
struct EvalManifest {
    version: u32,
    model: String,
    data: String,
    fold: String,
    fold_index: usize,
    semantics: &'static str,
    test_rows: usize,
    reports: Vec<SummaryRow>,
    combined: Option<CombinedSummary>,
    invocations: Option<InvocationCounts>,
}

/// Turn a report name into a stable file stem ("stage 1: attack
/// detection" → "stage_1_attack_detection").
fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut last_was_sep = true;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
            last_was_sep = false;
        } else if !last_was_sep {
            out.push('_');
            last_was_sep = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn store_report(out: &Path, stem: &str, report: &StageReport) -> Result<String> {
    let file_name = format!("{stem}.json");
    let path = out.join(&file_name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_report(report, gasguard::metrics::ReportFormat::Json, BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(file_name)
}

pub fn cmd_eval(
    settings: &Settings,
    model_dir: &Path,
    data: Option<PathBuf>,
    fold_path: &Path,
    out: Option<PathBuf>,
    semantics_flag: Option<SemanticsArg>,
    format_flag: Option<FormatArg>,
) -> Result<()> {
    let data = settings.input_path(data)?;
    let dataset = load_csv(&data)?;
    let fold = FoldDocument::load(fold_path)?;
    fold.check_against(&dataset, &data)?;
    let test_view = dataset_view(&dataset, &fold.fold.test);

    let model = CascadeModel::load(model_dir)
        .with_context(|| format!("loading the cascade from {}", model_dir.display()))?;
    let semantics = settings.semantics(semantics_flag);
    let format = settings.format(format_flag);

    let out = settings.out_dir(out)?;
    create_dir(&out)?;

    let mut rows = Vec::new();
    let mut rendered = Vec::new();
    let mut combined = None;

    if semantics.wants_stagewise() {
        let reports = model.evaluate_stagewise(&test_view).context("stagewise evaluation")?;
        for (i, report) in reports.iter().enumerate() {
            let file = store_report(&out, &format!("{:02}_{}", i + 1, slug(&report.name)), report)?;
            rows.push(SummaryRow {
                name: report.name.clone(),
                accuracy: report.metrics.accuracy,
                correct: report.correct,
                incorrect: report.incorrect,
                file,
            });
            rendered.push(render_report(report, format.into())?);
        }
        if let [stage1, stage2, ..] = reports.as_slice() {
            let product = combined_two_stage(&stage1.metrics, &stage2.metrics);
            combined = Some(CombinedSummary {
                stage1_accuracy: stage1.metrics.accuracy,
                stage2_accuracy: stage2.metrics.accuracy,
                accuracy: product.accuracy,
                precision: product.precision,
                recall: product.recall,
            });
            write_json(&out.join("combined.json"), combined.as_ref().unwrap())?;
        }
    }

    let mut invocations = None;
    if semantics.wants_end_to_end() {
        model.reset_invocation_counts();
        let report = model.evaluate_end_to_end(&test_view).context("end-to-end evaluation")?;
        invocations = Some(model.invocation_counts());
        let file = store_report(&out, "end_to_end", &report)?;
        rows.push(SummaryRow {
            name: report.name.clone(),
            accuracy: report.metrics.accuracy,
            correct: report.correct,
            incorrect: report.incorrect,
            file,
        });
        rendered.push(render_report(&report, format.into())?);
    }

    let manifest = EvalManifest {
        version: MANIFEST_VERSION,
        model: model_dir.display().to_string(),
        data: data.display().to_string(),
        fold: fold_path.display().to_string(),
        fold_index: fold.fold.index,
        semantics: semantics.as_str(),
        test_rows: test_view.len(),
        reports: rows,
        combined,
        invocations,
    };
    write_json(&out.join("eval_manifest.json"), &manifest)?;

    let stdout = std::io::stdout();
    let mut handle = stdout.lock();
    match format {
        FormatArg::Text => {
            for text in &rendered {
                writeln!(handle, "{text}")?;
            }
            if let Some(c) = &manifest.combined {
                writeln!(
                    handle,
                    "combined detection x categorization: accuracy {:.2}% ({:.4}), \
                     precision {:.3}, recall {:.3}",
                    c.accuracy * 100.0,
                    c.accuracy,
                    c.precision,
                    c.recall
                )?;
            }
        }
        FormatArg::Json => {
            writeln!(handle, "{}", serde_json::to_string_pretty(&manifest)?)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(settings: &Settings, input: &Path, format_flag: Option<FormatArg>) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading report {}", input.display()))?;
    let report = gasguard::metrics::parse_report(&text)
        .with_context(|| format!("parsing report {}", input.display()))?;
    let format = settings.format(format_flag);
    writeln!(std::io::stdout(), "{}", render_report(&report, format.into())?)?;
    Ok(())
}
