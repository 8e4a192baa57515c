//! Random-forest classification, built from scratch.
//!
//! Trees are binary CART classifiers: each branch compares one feature
//! against a threshold, each leaf holds the class counts of the training
//! rows that reached it. Candidate thresholds are the midpoints between
//! consecutive distinct values of a feature; candidates are scored by the
//! count-weighted Gini impurity of the two children, compared in exact
//! integer arithmetic so platform float quirks can never flip a decision.
//!
//! A forest trains each tree on a bootstrap resample, restricts every node
//! to a random subset of features, and classifies by majority vote. All
//! randomness flows from one seed (each tree gets its own stream of the
//! same generator), so a seeded training run is fully reproducible, down
//! to the serialized model bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io;
use thiserror::Error;

pub const MODEL_DOC_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("row {row} has {found} features, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("row {row}, feature {feature}: value is not finite")]
    NonFinite { row: usize, feature: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelLengthMismatch { rows: usize, labels: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("stored model is malformed: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Training-time knobs. The defaults are the ones used by the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Trees in the forest.
    pub tree_count: usize,
    /// Features inspected per node; `None` means `⌊log₂ F⌋ + 1`.
    pub max_features: Option<usize>,
    /// Minimum rows on each side of a split.
    pub min_samples_leaf: usize,
    /// Depth cap; `None` grows until pure or unsplittable.
    pub max_depth: Option<usize>,
    /// Train each tree on an n-of-n resample drawn with replacement.
    pub bootstrap: bool,
    pub seed: u64,
    /// Rows per work unit in [`Forest::predict_many`]. Purely a throughput
    /// hint: predictions do not depend on it.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tree_count: 100,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
            batch_size: 1000,
        }
    }
}

impl TrainConfig {
    /// Features inspected per node once the default rule is applied.
    pub fn effective_max_features(&self, feature_count: usize) -> usize {
        match self.max_features {
            Some(m) => m,
            None => feature_count.ilog2() as usize + 1,
        }
    }

    fn validate(&self, feature_count: usize) -> Result<(), ForestError> {
        let complain = |msg: String| Err(ForestError::BadConfig(msg));
        if self.tree_count == 0 {
            return complain("tree_count must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return complain("min_samples_leaf must be at least 1".into());
        }
        if self.batch_size == 0 {
            return complain("batch_size must be at least 1".into());
        }
        if let Some(m) = self.max_features {
            if m == 0 || m > feature_count {
                return complain(format!("max_features {m} must be in 1..={feature_count}"));
            }
        }
        Ok(())
    }
}

/// Gini impurity of a label multiset: `1 − Σ pᵢ²`. Empty input is defined
/// as 0 (a vacuously pure node).
pub fn gini(labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &label in labels {
        *counts.entry(label).or_insert(0u64) += 1;
    }
    let n = labels.len() as f64;
    1.0 - counts.values().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// A chosen decision boundary: rows with `row[feature] <= threshold` go
/// left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

/// Split quality as an exact rational. Minimizing the count-weighted child
/// Gini is equivalent to maximizing `ssl/nl + ssr/nr`, where `ss` is the
/// sum of squared class counts on a side; that fraction is compared by
/// cross-multiplication in 128-bit integers, so candidate ranking is exact.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    ssl: u64,
    nl: u64,
    ssr: u64,
    nr: u64,
}

impl SplitScore {
    fn numerator(&self) -> u128 {
        u128::from(self.ssl) * u128::from(self.nr) + u128::from(self.ssr) * u128::from(self.nl)
    }

    fn denominator(&self) -> u128 {
        u128::from(self.nl) * u128::from(self.nr)
    }

    fn beats(&self, other: &SplitScore) -> bool {
        self.numerator() * other.denominator() > other.numerator() * self.denominator()
    }

    /// Strictly lower weighted impurity than the unsplit node, whose sum
    /// of squared counts is `node_ss` over `n` rows.
    fn improves_on(&self, node_ss: u64, n: u64) -> bool {
        self.numerator() * u128::from(n) > u128::from(node_ss) * self.denominator()
    }
}

struct FeatureScan {
    threshold: f64,
    score: SplitScore,
}

/// Best valid boundary for one feature, or `None` if the feature is
/// constant on these rows (or no boundary satisfies `min_leaf`). `pairs`
/// is the (value, class index) list of the node's rows; it is sorted in
/// place. Boundaries are scanned in ascending value order and ties keep
/// the earliest, so the result is deterministic.
fn scan_feature(
    pairs: &mut [(f64, u32)],
    class_count: usize,
    min_leaf: u64,
) -> Option<FeatureScan> {
    if pairs.len() < 2 {
        return None;
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let n = pairs.len() as u64;
    let mut left = vec![0u64; class_count];
    let mut right = vec![0u64; class_count];
    for &(_, class) in pairs.iter() {
        right[class as usize] += 1;
    }
    let mut ssl = 0u64;
    let mut ssr: u64 = right.iter().map(|&c| c * c).sum();
    let mut best: Option<FeatureScan> = None;

    for (i, window) in pairs.windows(2).enumerate() {
        let class = window[0].1 as usize;
        // Moving one row of `class` across the boundary shifts each squared
        // count by an odd number; track the sums incrementally.
        ssl += 2 * left[class] + 1;
        left[class] += 1;
        ssr -= 2 * right[class] - 1;
        right[class] -= 1;

        let (a, b) = (window[0].0, window[1].0);
        if a == b {
            continue;
        }
        let nl = (i + 1) as u64;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        // Midpoint threshold, nudged back onto `a` if rounding would let
        // the right-hand value leak left.
        let mut threshold = 0.5 * (a + b);
        if !(a <= threshold && threshold < b) {
            threshold = a;
        }
        let score = SplitScore { ssl, nl, ssr, nr };
        if best.as_ref().is_none_or(|incumbent| score.beats(&incumbent.score)) {
            best = Some(FeatureScan { threshold, score });
        }
    }
    best
}

fn class_index_map(labels: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut space: Vec<u32> = labels.to_vec();
    space.sort_unstable();
    space.dedup();
    let ids = labels
        .iter()
        .map(|label| space.binary_search(label).expect("label in space") as u32)
        .collect();
    (space, ids)
}

/// The split of `rows` (restricted to `candidates`, tried in the given
/// order) that most reduces count-weighted Gini impurity. Returns `None`
/// when no candidate boundary **strictly** reduces impurity — callers that
/// must keep growing anyway (see [`train_forest`]) handle that case
/// themselves. Ties keep the earliest candidate.
pub fn best_split(
    rows: &[Vec<f64>],
    labels: &[u32],
    candidates: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    assert_eq!(rows.len(), labels.len(), "rows and labels must align");
    let (space, ids) = class_index_map(labels);
    let node_ss: u64 = {
        let mut counts = vec![0u64; space.len()];
        for &id in &ids {
            counts[id as usize] += 1;
        }
        counts.iter().map(|&c| c * c).sum()
    };

    let mut best: Option<(usize, FeatureScan)> = None;
    let mut pairs = Vec::with_capacity(rows.len());
    for &feature in candidates {
        pairs.clear();
        pairs.extend(rows.iter().zip(&ids).map(|(row, &id)| (row[feature], id)));
        if let Some(scan) = scan_feature(&mut pairs, space.len(), min_samples_leaf as u64) {
            if best.as_ref().is_none_or(|(_, incumbent)| scan.score.beats(&incumbent.score)) {
                best = Some((feature, scan));
            }
        }
    }
    best.filter(|(_, scan)| scan.score.improves_on(node_ss, rows.len() as u64))
        .map(|(feature, scan)| Split { feature, threshold: scan.threshold })
}

/// One tree node. Children are indices into the tree's node arena and are
/// always allocated after their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Branch { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { counts: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Class-index distribution of the leaf this row lands in.
    fn leaf_counts(&self, row: &[f64]) -> &[u64] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Branch { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    fn leaf_class(&self, row: &[f64]) -> usize {
        argmax_first(self.leaf_counts(row))
    }
}

/// Index of the largest value; ties go to the earliest (for class counts,
/// that is the lowest label).
fn argmax_first(values: &[u64]) -> usize {
    let mut best = 0;
    for (i, &value) in values.iter().enumerate() {
        if value > values[best] {
            best = i;
        }
    }
    best
}

/// A trained forest plus everything needed to reproduce and audit it: the
/// training configuration and a digest of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    config: TrainConfig,
    feature_count: usize,
    label_space: Vec<u32>,
    fingerprint: String,
    trees: Vec<Tree>,
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    class_ids: &'a [u32],
    class_count: usize,
    feature_count: usize,
    max_features: usize,
    min_samples_leaf: u64,
    max_depth: Option<usize>,
    bootstrap: bool,
    seed: u64,
}

impl TreeBuilder<'_> {
    /// Grow one tree. Every tree draws from its own stream of the seeded
    /// generator, so trees are independent yet the whole forest is a pure
    /// function of (data, config).
    fn build(&self, tree_index: u64) -> Tree {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tree_index + 1);

        let n = self.rows.len();
        let sample: Vec<u32> = if self.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };

        let mut nodes = vec![Node::Leaf { counts: Vec::new() }];
        let mut stack = vec![(0usize, sample, 0usize)];
        let mut feature_pool: Vec<usize> = (0..self.feature_count).collect();

        while let Some((slot, node_rows, depth)) = stack.pop() {
            let mut counts = vec![0u64; self.class_count];
            for &row in &node_rows {
                counts[self.class_ids[row as usize] as usize] += 1;
            }
            let n = node_rows.len() as u64;
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_allows = self.max_depth.is_none_or(|limit| depth < limit);
            if pure || !depth_allows || n < 2 * self.min_samples_leaf {
                nodes[slot] = Node::Leaf { counts };
                continue;
            }

            // Partial Fisher–Yates: the first `max_features` entries become
            // the candidate features, in draw order.
            for i in 0..self.max_features {
                let j = rng.gen_range(i..self.feature_count);
                feature_pool.swap(i, j);
            }

            let mut best: Option<(usize, FeatureScan)> = None;
            let mut pairs = Vec::with_capacity(node_rows.len());
            for &feature in &feature_pool[..self.max_features] {
                pairs.clear();
                pairs.extend(
                    node_rows.iter().map(|&row| {
                        (self.rows[row as usize][feature], self.class_ids[row as usize])
                    }),
                );
                if let Some(scan) =
                    scan_feature(&mut pairs, self.class_count, self.min_samples_leaf)
                {
                    if best.as_ref().is_none_or(|(_, incumbent)| scan.score.beats(&incumbent.score))
                    {
                        best = Some((feature, scan));
                    }
                }
            }

            // An impure node is split even when the best boundary only ties
            // the parent's impurity (mixed-label regions, e.g. parity
            // patterns, are separable only through such splits). If every
            // candidate feature is constant here, the node stays a leaf.
            let Some((feature, scan)) = best else {
                nodes[slot] = Node::Leaf { counts };
                continue;
            };

            let threshold = scan.threshold;
            let mut left_rows = Vec::with_capacity(scan.score.nl as usize);
            let mut right_rows = Vec::with_capacity(scan.score.nr as usize);
            for &row in &node_rows {
                if self.rows[row as usize][feature] <= threshold {
                    left_rows.push(row);
                } else {
                    right_rows.push(row);
                }
            }

            let left = nodes.len() as u32;
            nodes.push(Node::Leaf { counts: Vec::new() });
            let right = nodes.len() as u32;
            nodes.push(Node::Leaf { counts: Vec::new() });
            nodes[slot] = Node::Branch { feature, threshold, left, right };
            stack.push((right as usize, right_rows, depth + 1));
            stack.push((left as usize, left_rows, depth + 1));
        }
        Tree { nodes }
    }
}

fn data_fingerprint(rows: &[Vec<f64>], labels: &[u32]) -> String {
    let mut hasher = Sha256::new();
    for row in rows {
        for value in row {
            hasher.update(value.to_le_bytes());
        }
    }
    for label in labels {
        hasher.update(label.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a String");
    }
    hex
}

/// Train a forest on `rows` (one `Vec<f64>` per record, all the same
/// length) with integer class labels.
pub fn train_forest(
    rows: &[Vec<f64>],
    labels: &[u32],
    config: &TrainConfig,
) -> Result<Forest, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(ForestError::LabelLengthMismatch { rows: rows.len(), labels: labels.len() });
    }
    let feature_count = rows[0].len();
    if feature_count == 0 {
        return Err(ForestError::BadConfig("rows have no features".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != feature_count {
            return Err(ForestError::RaggedRow {
                row: i,
                expected: feature_count,
                found: row.len(),
            });
        }
        for (j, value) in row.iter().enumerate() {
            if !value.is_finite() {
                return Err(ForestError::NonFinite { row: i, feature: j });
            }
        }
    }
    config.validate(feature_count)?;

    let (label_space, class_ids) = class_index_map(labels);
    let builder = TreeBuilder {
        rows,
        class_ids: &class_ids,
        class_count: label_space.len(),
        feature_count,
        max_features: config.effective_max_features(feature_count),
        min_samples_leaf: config.min_samples_leaf as u64,
        max_depth: config.max_depth,
        bootstrap: config.bootstrap,
        seed: config.seed,
    };
    let trees: Vec<Tree> =
        (0..config.tree_count as u64).into_par_iter().map(|i| builder.build(i)).collect();

    Ok(Forest {
        config: config.clone(),
        feature_count,
        label_space,
        fingerprint: data_fingerprint(rows, labels),
        trees,
    })
}

impl Forest {
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    /// The distinct training labels, ascending. Predictions are always
    /// members of this set.
    pub fn label_space(&self) -> &[u32] {
        &self.label_space
    }

    /// Hex digest of the training data this forest was fitted on.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    /// Majority vote across trees; ties go to the lowest label.
    pub fn predict(&self, row: &[f64]) -> u32 {
        assert_eq!(row.len(), self.feature_count, "feature count mismatch");
        let mut votes = vec![0u64; self.label_space.len()];
        for tree in &self.trees {
            votes[tree.leaf_class(row)] += 1;
        }
        self.label_space[argmax_first(&votes)]
    }

    /// Mean of the trees' leaf class distributions, aligned with
    /// [`Forest::label_space`].
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.feature_count, "feature count mismatch");
        let mut mean = vec![0.0f64; self.label_space.len()];
        for tree in &self.trees {
            let counts = tree.leaf_counts(row);
            let total: u64 = counts.iter().sum();
            for (slot, &count) in mean.iter_mut().zip(counts) {
                *slot += count as f64 / total as f64;
            }
        }
        for slot in &mut mean {
            *slot /= self.trees.len() as f64;
        }
        mean
    }

    /// Classify many rows, processed in `batch_size` work units in
    /// parallel. Output order matches input order and every prediction
    /// equals what [`Forest::predict`] would return.
    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Vec<u32> {
        let batch = self.config.batch_size.max(1);
        let batches: Vec<Vec<u32>> = rows
            .par_chunks(batch)
            .map(|chunk| chunk.iter().map(|row| self.predict(row)).collect())
            .collect();
        batches.into_iter().flatten().collect()
    }

    pub fn save<W: io::Write>(&self, writer: W) -> Result<(), ForestError> {
        let document = ForestDocument {
            version: MODEL_DOC_VERSION,
            config: self.config.clone(),
            feature_count: self.feature_count,
            label_space: self.label_space.clone(),
            fingerprint: self.fingerprint.clone(),
            trees: self.trees.clone(),
        };
        serde_json::to_writer(writer, &document)?;
        Ok(())
    }

    pub fn load<R: io::Read>(reader: R) -> Result<Forest, ForestError> {
        let document: ForestDocument = serde_json::from_reader(reader)?;
        if document.version != MODEL_DOC_VERSION {
            return Err(ForestError::UnsupportedVersion(document.version));
        }
        let malformed = |msg: String| Err(ForestError::MalformedModel(msg));
        if document.feature_count == 0 {
            return malformed("feature_count is zero".into());
        }
        if document.label_space.is_empty() {
            return malformed("label space is empty".into());
        }
        if !document.label_space.windows(2).all(|w| w[0] < w[1]) {
            return malformed("label space is not strictly ascending".into());
        }
        if document.trees.is_empty() {
            return malformed("no trees".into());
        }
        for (t, tree) in document.trees.iter().enumerate() {
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Branch { feature, threshold, left, right } => {
                        let child_ok = |c: u32| (c as usize) > i && (c as usize) < tree.nodes.len();
                        if *feature >= document.feature_count
                            || !threshold.is_finite()
                            || !child_ok(*left)
                            || !child_ok(*right)
                        {
                            return malformed(format!("tree {t}, node {i}: bad branch"));
                        }
                    }
                    Node::Leaf { counts } => {
                        if counts.len() != document.label_space.len()
                            || counts.iter().all(|&c| c == 0)
                        {
                            return malformed(format!("tree {t}, node {i}: bad leaf"));
                        }
                    }
                }
            }
        }
        Ok(Forest {
            config: document.config,
            feature_count: document.feature_count,
            label_space: document.label_space,
            fingerprint: document.fingerprint,
            trees: document.trees,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ForestDocument {
    version: u32,
    config: TrainConfig,
    feature_count: usize,
    label_space: Vec<u32>,
    fingerprint: String,
    trees: Vec<Tree>,
}
