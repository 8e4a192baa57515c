//! Confusion matrices, one-vs-rest classification rates, and report
//! rendering.
//!
//! Every rate is defined per class against the rest of the label set
//! (TP/FP/TN/FN taken from the matrix), then aggregated with
//! support weights, where support is the row sum (true instances) of a
//! class. Ill-defined ratios (zero denominator) are reported as 0 and
//! flagged rather than propagated as NaN.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("truth and prediction lists differ in length ({truth} vs {predicted})")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0} does not appear in the declared label set")]
    UnknownLabel(u32),
    #[error("label {0} appears twice in the declared label set")]
    DuplicateLabel(u32),
    #[error("the label set is empty")]
    EmptyLabelSet,
    #[error("matrix rows must form a square over the label set")]
    NotSquare,
    #[error("the matrix holds no observations")]
    EmptyMatrix,
    #[error("unsupported report document version {0}")]
    UnsupportedVersion(u32),
    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Square matrix of counts; rows are true labels, columns predicted labels,
/// both in the order of the declared label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<u32>,
    /// Human-readable names aligned with `labels`.
    names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Tally truth/prediction pairs over a declared label set. Every value in
    /// both lists must appear in the set.
    pub fn from_pairs(
        truth: &[u32],
        predicted: &[u32],
        labels: &[u32],
    ) -> Result<Self, MetricsError> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                truth: truth.len(),
                predicted: predicted.len(),
            });
        }
        let index = label_index(labels)?;
        let n = labels.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (&t, &p) in truth.iter().zip(predicted) {
            let ti = *index.get(&t).ok_or(MetricsError::UnknownLabel(t))?;
            let pi = *index.get(&p).ok_or(MetricsError::UnknownLabel(p))?;
            counts[ti][pi] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            names: labels.iter().map(|l| l.to_string()).collect(),
            counts,
        })
    }

    /// Build a matrix from precomputed counts (row-major, square over the
    /// label set).
    pub fn from_counts(labels: &[u32], counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        label_index(labels)?;
        if counts.len() != labels.len() || counts.iter().any(|row| row.len() != labels.len()) {
            return Err(MetricsError::NotSquare);
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            names: labels.iter().map(|l| l.to_string()).collect(),
            counts,
        })
    }

    /// Replace the display names (e.g. "Normal"/"Attack" for a 0/1 matrix).
    pub fn with_names<S: Into<String>>(mut self, names: Vec<S>) -> Self {
        assert_eq!(names.len(), self.labels.len(), "one name per label");
        self.names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self, true_index: usize, predicted_index: usize) -> u64 {
        self.counts[true_index][predicted_index]
    }

    pub fn row(&self, true_index: usize) -> &[u64] {
        &self.counts[true_index]
    }

    /// True-instance count of a class (row sum).
    pub fn support(&self, index: usize) -> u64 {
        self.counts[index].iter().sum()
    }

    /// Predicted-instance count of a class (column sum).
    pub fn predicted(&self, index: usize) -> u64 {
        self.counts.iter().map(|row| row[index]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums for every class, aligned with the label set.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.labels.len()).map(|i| self.support(i)).collect()
    }
}

fn label_index(labels: &[u32]) -> Result<BTreeMap<u32, usize>, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::EmptyLabelSet);
    }
    let mut index = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        if index.insert(label, i).is_some() {
            return Err(MetricsError::DuplicateLabel(label));
        }
    }
    Ok(index)
}

/// Tally a confusion matrix from parallel truth/prediction lists.
pub fn confusion(
    truth: &[u32],
    predicted: &[u32],
    labels: &[u32],
) -> Result<ConfusionMatrix, MetricsError> {
    ConfusionMatrix::from_pairs(truth, predicted, labels)
}

// ---------------------------------------------------------------------------
// Per-class rates
// ---------------------------------------------------------------------------

/// One-vs-rest counts and rates for a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub label: u32,
    pub name: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when TP+FN = 0; TPR/FNR/recall were defined as 0.
    pub positive_rates_defined: bool,
    /// False when FP+TN = 0; FPR/TNR were defined as 0.
    pub negative_rates_defined: bool,
    /// False when TP+FP = 0; precision was defined as 0.
    pub precision_defined: bool,
}

/// Support-weighted means of the per-class rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRates {
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Full metric block derived from one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClassMetrics>,
    pub accuracy: f64,
    pub weighted: WeightedRates,
    /// Classes whose ratios had zero denominators, with the rate names.
    pub ill_defined: Vec<String>,
}

fn ratio(numerator: u64, denominator: u64) -> (f64, bool) {
    if denominator == 0 {
        (0.0, false)
    } else {
        (numerator as f64 / denominator as f64, true)
    }
}

/// Derive accuracy, per-class one-vs-rest rates, and support-weighted
/// aggregates from a confusion matrix.
pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Result<ClassMetrics, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }

    let n = matrix.labels().len();
    let mut per_class = Vec::with_capacity(n);
    let mut ill_defined = Vec::new();
    for i in 0..n {
        let tp = matrix.count(i, i);
        let support = matrix.support(i);
        let fn_ = support - tp;
        let fp = matrix.predicted(i) - tp;
        let tn = total - tp - fn_ - fp;

        let (tpr, positive_rates_defined) = ratio(tp, tp + fn_);
        let (fnr, _) = ratio(fn_, tp + fn_);
        let (fpr, negative_rates_defined) = ratio(fp, fp + tn);
        let (tnr, _) = ratio(tn, fp + tn);
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let recall = tpr;

        let name = matrix.names()[i].clone();
        if !positive_rates_defined {
            ill_defined.push(format!("{name}: TPR/FNR/recall"));
        }
        if !negative_rates_defined {
            ill_defined.push(format!("{name}: FPR/TNR"));
        }
        if !precision_defined {
            ill_defined.push(format!("{name}: precision"));
        }

        per_class.push(PerClassMetrics {
            label: matrix.labels()[i],
            name,
            support,
            tp,
            fp,
            tn,
            fn_,
            tpr,
            fpr,
            tnr,
            fnr,
            precision,
            recall,
            positive_rates_defined,
            negative_rates_defined,
            precision_defined,
        });
    }

    let weigh = |f: fn(&PerClassMetrics) -> f64| -> f64 {
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let weighted = WeightedRates {
        tpr: weigh(|m| m.tpr),
        fpr: weigh(|m| m.fpr),
        tnr: weigh(|m| m.tnr),
        fnr: weigh(|m| m.fnr),
        precision: weigh(|m| m.precision),
        recall: weigh(|m| m.recall),
    };

    Ok(ClassMetrics {
        per_class,
        accuracy: matrix.trace() as f64 / total as f64,
        weighted,
        ill_defined,
    })
}

// ---------------------------------------------------------------------------
// Two-stage combination
// ---------------------------------------------------------------------------

/// Product-rule figures for a detector followed by a categorizer: a record
/// is fully correct only when both stages are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedTwoStage {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Combine two stage metric blocks by multiplying accuracy and the
/// support-weighted precision/recall.
pub fn combined_two_stage(stage1: &ClassMetrics, stage2: &ClassMetrics) -> CombinedTwoStage {
    CombinedTwoStage {
        accuracy: stage1.accuracy * stage2.accuracy,
        precision: stage1.weighted.precision * stage2.weighted.precision,
        recall: stage1.weighted.recall * stage2.weighted.recall,
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// How a report's population was routed to the classifier under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSemantics {
    /// Each stage is scored on its true population (errors from earlier
    /// stages are not propagated).
    GroundTruthRouted,
    /// Records flow through the whole cascade; earlier-stage errors count
    /// against the final label.
    EndToEnd,
}

impl EvalSemantics {
    pub fn describe(self) -> &'static str {
        match self {
            EvalSemantics::GroundTruthRouted => "ground-truth routed",
            EvalSemantics::EndToEnd => "end-to-end",
        }
    }
}

/// Evaluation result for one classifier: the matrix plus everything derived
/// from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub semantics: EvalSemantics,
    pub matrix: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub correct: u64,
    pub incorrect: u64,
}

impl StageReport {
    pub fn new(
        name: impl Into<String>,
        semantics: EvalSemantics,
        matrix: ConfusionMatrix,
    ) -> Result<Self, MetricsError> {
        let metrics = per_class_metrics(&matrix)?;
        let correct = matrix.trace();
        let incorrect = matrix.total() - correct;
        Ok(StageReport { name: name.into(), semantics, matrix, metrics, correct, incorrect })
    }
}

/// Output encoding for [`render_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Human-readable tables: matrix, then per-class rates at three
    /// decimals, with accuracy as a two-decimal percentage.
    Text,
    /// JSON document with exact counts and full-precision rates; parses
    /// back to an equal [`StageReport`].
    Json,
}

const REPORT_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ReportDocument {
    version: u32,
    report: StageReport,
}

/// Render a report to text or machine-readable JSON.
pub fn render_report(report: &StageReport, format: ReportFormat) -> Result<String, MetricsError> {
    match format {
        ReportFormat::Text => Ok(render_text(report)),
        ReportFormat::Json => {
            let doc = ReportDocument { version: REPORT_DOC_VERSION, report: report.clone() };
            Ok(serde_json::to_string_pretty(&doc)?)
        }
    }
}

/// Write a rendered report to a sink.
pub fn write_report<W: io::Write>(
    report: &StageReport,
    format: ReportFormat,
    mut sink: W,
) -> Result<(), MetricsError> {
    let rendered = render_report(report, format)?;
    sink.write_all(rendered.as_bytes())?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Parse a machine-readable report document back into a [`StageReport`].
pub fn parse_report(text: &str) -> Result<StageReport, MetricsError> {
    let doc: ReportDocument = serde_json::from_str(text)?;
    if doc.version != REPORT_DOC_VERSION {
        return Err(MetricsError::UnsupportedVersion(doc.version));
    }
    Ok(doc.report)
}

fn render_text(report: &StageReport) -> String {
    use std::fmt::Write;

    let matrix = &report.matrix;
    let n = matrix.labels().len();
    let name_width =
        matrix.names().iter().map(|s| s.len()).chain(["classified as".len()]).max().unwrap_or(0);
    let cell_width = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| matrix.count(i, j).to_string().len())
        .chain(matrix.names().iter().map(|s| s.len()))
        .max()
        .unwrap_or(1);

    let mut out = String::new();
    let _ = writeln!(out, "=== {} ({}) ===", report.name, report.semantics.describe());
    let _ = write!(out, "{:<name_width$}", "classified as");
    for name in matrix.names() {
        let _ = write!(out, " | {name:>cell_width$}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{:<name_width$}", matrix.names()[i]);
        for j in 0..n {
            let _ = write!(out, " | {:>cell_width$}", matrix.count(i, j));
        }
        out.push('\n');
    }

    let _ = writeln!(
        out,
        "accuracy: {:.2}%  ({} correct, {} incorrect)",
        report.metrics.accuracy * 100.0,
        report.correct,
        report.incorrect
    );

    let _ = writeln!(
        out,
        "{:<name_width$} |   TPR   |   FPR   |   TNR   |   FNR   | precision | recall",
        "class"
    );
    let mut rows: Vec<(&str, f64, f64, f64, f64, f64, f64)> = report
        .metrics
        .per_class
        .iter()
        .map(|m| (m.name.as_str(), m.tpr, m.fpr, m.tnr, m.fnr, m.precision, m.recall))
        .collect();
    let w = &report.metrics.weighted;
    rows.push(("weighted", w.tpr, w.fpr, w.tnr, w.fnr, w.precision, w.recall));
    for (name, tpr, fpr, tnr, fnr, precision, recall) in rows {
        let _ = writeln!(
            out,
            "{name:<name_width$} |  {tpr:.3}  |  {fpr:.3}  |  {tnr:.3}  |  {fnr:.3}  |   {precision:.3}   |  {recall:.3}"
        );
    }
    if !report.metrics.ill_defined.is_empty() {
        let _ = writeln!(
            out,
            "ill-defined ratios reported as 0: {}",
            report.metrics.ill_defined.join("; ")
        );
    }
    out
}
