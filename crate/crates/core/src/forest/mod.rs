//! Random forest over feature vectors: training, prediction, evaluation.

pub mod model;
pub mod rng;
pub mod split;
pub mod tree;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::vector::FEATURE_COUNT;
use crate::features::FeatureVector;
use crate::Exec;

pub use model::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use rng::XorShift64;
pub use split::{split_dataset, SplitPolicy, TrainTest};
pub use tree::{best_split, gini, Samples, Split, Tree, TreeNode};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set only holds {0} samples")]
    SingleCategory(Category),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("total weight is zero")]
    ZeroWeight,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("model built for feature ledger {found}, this build uses {expected}")]
    LedgerMismatch { expected: String, found: String },
    #[error("bad model file: {0}")]
    Format(String),
    #[error("split policy {policy} needs {needed} {category} samples, have {have}")]
    NotEnoughSamples { policy: &'static str, category: Category, needed: usize, have: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Benign,
    Malicious,
}

impl Category {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Benign => "benign",
            Category::Malicious => "malicious",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A training or test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub features: FeatureVector,
    pub category: Category,
    /// Body digest, used to spot train/test overlap.
    pub digest: Option<String>,
}

impl Labeled {
    pub fn new(features: FeatureVector, category: Category) -> Self {
        Labeled { features, category, digest: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    pub benign: f64,
    pub malicious: f64,
}

impl CategoryWeights {
    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Benign => self.benign,
            Category::Malicious => self.malicious,
        }
    }
}

impl Default for CategoryWeights {
    fn default() -> Self {
        CategoryWeights { benign: 1.0, malicious: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub weights: CategoryWeights,
    pub seed: u64,
    /// Features tried per node; `None` means `ceil(sqrt(feature count))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 10, weights: CategoryWeights::default(), seed: 0, mtry: None, bootstrap: true }
    }
}

pub fn default_mtry(n_features: usize) -> usize {
    (n_features as f64).sqrt().ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_trees: usize,
    pub category_weights: CategoryWeights,
    pub n_features: usize,
    pub ledger_hash: String,
    pub rng_seed: u64,
    pub mtry: usize,
    pub bootstrap: bool,
}

/// Trains on labeled feature vectors.
pub fn train_forest(data: &[Labeled], cfg: &ForestConfig, exec: Exec) -> Result<ForestModel, ForestError> {
    let rows: Vec<&[f64]> = data.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<Category> = data.iter().map(|s| s.category).collect();
    let mut m = train_rows(&rows, &labels, cfg, exec)?;
    m.ledger_hash = crate::features::ledger_hash().to_string();
    Ok(m)
}

/// Trains on bare rows of equal width.
pub fn train_rows(
    rows: &[&[f64]],
    labels: &[Category],
    cfg: &ForestConfig,
    exec: Exec,
) -> Result<ForestModel, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(ForestError::Config("rows and labels differ in length".into()));
    }
    let n_features = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != n_features) {
        return Err(ForestError::FeatureCount { expected: n_features, got: r.len() });
    }
    if n_features == 0 {
        return Err(ForestError::Config("zero features".into()));
    }
    if cfg.n_trees == 0 {
        return Err(ForestError::Config("n_trees must be at least 1".into()));
    }
    let w = cfg.weights;
    if !(w.benign > 0.0 && w.malicious > 0.0 && w.benign.is_finite() && w.malicious.is_finite()) {
        return Err(ForestError::Config("category weights must be positive".into()));
    }
    if rows.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(ForestError::Config("non-finite feature value".into()));
    }
    if labels.iter().all(|&c| c == labels[0]) {
        return Err(ForestError::SingleCategory(labels[0]));
    }
    let mtry = cfg.mtry.unwrap_or_else(|| default_mtry(n_features)).clamp(1, n_features);
    let label_idx: Vec<u8> = labels.iter().map(|c| c.index() as u8).collect();
    let seeds = rng::tree_seeds(cfg.seed, cfg.n_trees);
    let n = rows.len();
    let trees = exec.map(&seeds, |&seed| {
        let mut r = XorShift64::new(seed);
        let mut mult = vec![0u32; n];
        if cfg.bootstrap {
            for _ in 0..n {
                mult[r.below(n)] += 1;
            }
        } else {
            mult.fill(1);
        }
        let weights: Vec<f64> =
            mult.iter().zip(labels).map(|(&m, &c)| m as f64 * w.get(c)).collect();
        let idx: Vec<usize> = (0..n).filter(|&i| mult[i] > 0).collect();
        let s = Samples { rows, labels: &label_idx, weights: &weights };
        tree::grow_tree(&s, idx, tree::GrowParams { mtry }, &mut r)
    });
    Ok(ForestModel {
        trees,
        n_trees: cfg.n_trees,
        category_weights: w,
        n_features,
        ledger_hash: String::new(),
        rng_seed: cfg.seed,
        mtry,
        bootstrap: cfg.bootstrap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub category: Category,
    /// Malicious share of the summed votes.
    pub score: f64,
}

impl ForestModel {
    /// Each tree votes with its leaf's category shares; the shares are summed
    /// and a tie goes to benign.
    pub fn predict_row(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::FeatureCount { expected: self.n_features, got: x.len() });
        }
        let mut sum = [0.0f64; 2];
        for t in &self.trees {
            let v = t.leaf_for(x);
            let total = v[0] + v[1];
            sum[0] += v[0] / total;
            sum[1] += v[1] / total;
        }
        let score = sum[1] / (sum[0] + sum[1]);
        let category = if sum[1] > sum[0] { Category::Malicious } else { Category::Benign };
        Ok(Prediction { category, score })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction, ForestError> {
        if self.n_features != FEATURE_COUNT {
            return Err(ForestError::FeatureCount { expected: self.n_features, got: FEATURE_COUNT });
        }
        self.predict_row(fv.as_slice())
    }

    pub fn predict_batch(&self, fvs: &[FeatureVector], exec: Exec) -> Result<Vec<Prediction>, ForestError> {
        exec.map(fvs, |fv| self.predict(fv)).into_iter().collect()
    }
}

/// Counts with malware as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, actual: Category, predicted: Category) {
        match (actual, predicted) {
            (Category::Malicious, Category::Malicious) => self.tp += 1,
            (Category::Benign, Category::Malicious) => self.fp += 1,
            (Category::Benign, Category::Benign) => self.tn += 1,
            (Category::Malicious, Category::Benign) => self.fn_ += 1,
        }
    }
}

pub fn evaluate(model: &ForestModel, test: &[Labeled], exec: Exec) -> Result<ConfusionMatrix, ForestError> {
    if test.is_empty() {
        return Err(ForestError::EmptyTestSet);
    }
    let preds = exec.map(test, |s| model.predict(&s.features));
    let mut cm = ConfusionMatrix::default();
    for (s, p) in test.iter().zip(preds) {
        cm.record(s.category, p?.category);
    }
    Ok(cm)
}

/// Number of test digests also present in the training set; logs a warning
/// when nonzero.
pub fn digest_overlap(train: &[Labeled], test: &[Labeled]) -> usize {
    let seen: std::collections::HashSet<&str> = train.iter().filter_map(|s| s.digest.as_deref()).collect();
    let n = test.iter().filter(|s| s.digest.as_deref().is_some_and(|d| seen.contains(d))).count();
    if n > 0 {
        log::warn!("{n} test samples share a body digest with the training set");
    }
    n
}

/// A ratio, or `None` when its denominator is zero.
pub type Metric = Option<f64>;

fn ratio(num: u64, den: u64) -> Metric {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: Metric,
    pub recall: Metric,
    pub accuracy: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub malware: ClassMetrics,
    pub benign: ClassMetrics,
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    Metrics {
        malware: ClassMetrics { precision: ratio(cm.tp, cm.tp + cm.fp), recall: ratio(cm.tp, cm.tp + cm.fn_), accuracy },
        benign: ClassMetrics { precision: ratio(cm.tn, cm.tn + cm.fn_), recall: ratio(cm.tn, cm.tn + cm.fp), accuracy },
    }
}

/// Four-decimal rendering, `undefined` for a missing value.
pub fn format_metric(m: Metric) -> String {
    m.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}
