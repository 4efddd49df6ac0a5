//! Training sets drawn from the store, and the train/classify commands.

use std::collections::BTreeSet;

use serde::Serialize;

use super::config::ForestSection;
use crate::flowstore::{FlowRecord, Store};
use crate::forest::{
    digest_overlap, evaluate, metrics, split_dataset, train_forest, Category, CategoryWeights, ConfusionMatrix,
    ForestConfig, ForestError, ForestModel, Labeled, Metrics, Prediction, SplitPolicy,
};
use crate::labels::GroundTruth;
use crate::Exec;

/// Digest identifying a sample: the decoded body when stored, else the raw one.
pub fn sample_digest(r: &FlowRecord) -> Option<&str> {
    r.decoded_sha1.as_deref().or(r.body_sha1.as_deref())
}

/// One sample per distinct body.
///
/// Malicious samples are ground-truth malicious records. Benign samples are
/// records no label source flagged whose body never appears as malicious.
/// Records without features are skipped; the lowest record id wins among
/// duplicates.
pub fn labeled_from_store(store: &Store) -> Vec<Labeled> {
    let malicious: BTreeSet<&str> = store
        .records()
        .filter(|r| r.labels.ground_truth == GroundTruth::Malicious)
        .filter_map(sample_digest)
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut recs: Vec<&FlowRecord> = store.records().collect();
    recs.sort_by_key(|r| r.record_id);
    for r in recs {
        let (Some(fv), Some(d)) = (&r.features, sample_digest(r)) else { continue };
        let category = if malicious.contains(d) {
            Category::Malicious
        } else if r.labels.is_clean() && r.labels.ground_truth != GroundTruth::Malicious {
            Category::Benign
        } else {
            continue;
        };
        if seen.insert(d) {
            out.push(Labeled { features: *fv, category, digest: Some(d.to_string()) });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub train_malicious: usize,
    pub train_benign: usize,
    pub test_malicious: usize,
    pub test_benign: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub overlap: usize,
}

impl ForestSection {
    pub fn forest_config(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            weights: CategoryWeights { benign: self.benign_weight, malicious: self.malicious_weight },
            seed,
            ..ForestConfig::default()
        }
    }
}

fn count(v: &[Labeled], c: Category) -> usize {
    v.iter().filter(|l| l.category == c).count()
}

/// Splits the store's samples by `policy`, trains, and evaluates on the held-out part.
pub fn cmd_train(
    store: &Store,
    section: &ForestSection,
    policy: SplitPolicy,
    seed: u64,
    exec: Exec,
) -> Result<(ForestModel, TrainReport), ForestError> {
    let data = labeled_from_store(store);
    let tt = split_dataset(data, policy, seed)?;
    let model = train_forest(&tt.train, &section.forest_config(seed), exec)?;
    let confusion = evaluate(&model, &tt.test, exec)?;
    let report = TrainReport {
        train_malicious: count(&tt.train, Category::Malicious),
        train_benign: count(&tt.train, Category::Benign),
        test_malicious: count(&tt.test, Category::Malicious),
        test_benign: count(&tt.test, Category::Benign),
        metrics: metrics(&confusion),
        confusion,
        overlap: digest_overlap(&tt.train, &tt.test),
    };
    Ok((model, report))
}

/// Predictions for every record that has features, in record id order.
pub fn cmd_classify(store: &Store, model: &ForestModel, exec: Exec) -> Result<Vec<(u64, Prediction)>, ForestError> {
    let mut recs: Vec<&FlowRecord> = store.records().filter(|r| r.features.is_some()).collect();
    recs.sort_by_key(|r| r.record_id);
    let fvs: Vec<_> = recs.iter().map(|r| r.features.expect("filtered")).collect();
    let preds = model.predict_batch(&fvs, exec)?;
    Ok(recs.iter().map(|r| r.record_id).zip(preds).collect())
}
