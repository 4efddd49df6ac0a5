//! Versioned JSON model files.
//!
//! Thresholds and leaf weights are written as decimal strings (shortest
//! round-trip form) so that reloading never drifts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeNode};
use super::{CategoryWeights, ForestError, ForestModel};

pub const MODEL_FORMAT: &str = "flowlab-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    ledger_hash: String,
    n_features: usize,
    n_trees: usize,
    category_weights: CategoryWeights,
    rng_seed: u64,
    mtry: usize,
    bootstrap: bool,
    trees: Vec<Vec<NodeFile>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum NodeFile {
    Split { feature: usize, threshold: String, left: usize, right: usize },
    Leaf { benign: String, malicious: String },
}

fn num(s: &str) -> Result<f64, ForestError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ForestError::Format(format!("bad number {s:?}")))
}

impl ForestModel {
    pub fn to_json(&self) -> String {
        let trees = self
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match *n {
                        TreeNode::Split { feature, threshold, left, right } => {
                            NodeFile::Split { feature, threshold: threshold.to_string(), left, right }
                        }
                        TreeNode::Leaf { votes } => {
                            NodeFile::Leaf { benign: votes[0].to_string(), malicious: votes[1].to_string() }
                        }
                    })
                    .collect()
            })
            .collect();
        let f = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            ledger_hash: self.ledger_hash.clone(),
            n_features: self.n_features,
            n_trees: self.n_trees,
            category_weights: self.category_weights,
            rng_seed: self.rng_seed,
            mtry: self.mtry,
            bootstrap: self.bootstrap,
            trees,
        };
        serde_json::to_string_pretty(&f).expect("model serializes")
    }

    /// Parses a model file. `expected_ledger` is the feature ledger hash the
    /// caller will feed vectors from.
    pub fn from_json(text: &str, expected_ledger: &str) -> Result<Self, ForestError> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| ForestError::Format(e.to_string()))?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(ForestError::Format(format!("unsupported format {} v{}", f.format, f.version)));
        }
        if f.ledger_hash != expected_ledger {
            return Err(ForestError::LedgerMismatch { expected: expected_ledger.into(), found: f.ledger_hash });
        }
        if f.trees.len() != f.n_trees || f.n_trees == 0 {
            return Err(ForestError::Format(format!("{} trees listed, n_trees = {}", f.trees.len(), f.n_trees)));
        }
        let mut trees = Vec::with_capacity(f.trees.len());
        for nodes in f.trees {
            let len = nodes.len();
            let mut out = Vec::with_capacity(len);
            for (i, n) in nodes.into_iter().enumerate() {
                out.push(match n {
                    NodeFile::Split { feature, threshold, left, right } => {
                        // children always follow their parent, so this also rules out cycles
                        if feature >= f.n_features || left <= i || right <= i || left >= len || right >= len {
                            return Err(ForestError::Format(format!("bad split at node {i}")));
                        }
                        TreeNode::Split { feature, threshold: num(&threshold)?, left, right }
                    }
                    NodeFile::Leaf { benign, malicious } => {
                        let votes = [num(&benign)?, num(&malicious)?];
                        if votes[0] < 0.0 || votes[1] < 0.0 || votes[0] + votes[1] <= 0.0 {
                            return Err(ForestError::Format(format!("leaf {i} has no weight")));
                        }
                        TreeNode::Leaf { votes }
                    }
                });
            }
            if out.is_empty() {
                return Err(ForestError::Format("empty tree".into()));
            }
            trees.push(Tree { nodes: out });
        }
        Ok(ForestModel {
            trees,
            n_trees: f.n_trees,
            category_weights: f.category_weights,
            n_features: f.n_features,
            ledger_hash: f.ledger_hash,
            rng_seed: f.rng_seed,
            mtry: f.mtry,
            bootstrap: f.bootstrap,
        })
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<(), ForestError> {
    fs::write(path, model.to_json())?;
    Ok(())
}

/// Loads a model trained on the current feature ledger.
pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    ForestModel::from_json(&fs::read_to_string(path)?, crate::features::ledger_hash())
}
