//! Retrieval and clustering evaluation: exact Recall@K, NMI, and the
//! facility-location machinery behind the structured clustering loss.

pub mod binary;
pub mod facility;
pub mod kmeans;
pub mod nmi;
pub mod recall;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::error::{DmlError, Result};
use crate::scalar::Scalar;

pub use binary::{binarize, BinaryCodes};
pub use facility::{
    assign_to_facilities, facility_score, loss_augmented_inference, oracle_clustering_score, ClusterAssignment,
    FacilitySet, Inference, InferenceMode, OracleClustering,
};
pub use kmeans::kmeans;
pub use nmi::nmi;
pub use recall::{recall_at_k, recall_at_k_hamming, recall_at_k_self, RecallReport, RetrievalMetric, DEFAULT_KS};

/// Recall@K plus NMI of a k-means clustering against the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub n_queries: usize,
    pub metric: RetrievalMetric,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn is_monotone(&self) -> bool {
        self.recall_at.values().zip(self.recall_at.values().skip(1)).all(|(a, b)| a <= b)
    }
}

fn usable_ks(n: usize) -> Vec<usize> {
    DEFAULT_KS.iter().copied().filter(|&k| k < n).collect()
}

fn finish(recall: RecallReport, nmi: f64) -> Result<EvalReport> {
    let report = EvalReport { recall_at: recall.recall_at, nmi, n_queries: recall.n_queries, metric: recall.metric };
    if !report.is_monotone() {
        return Err(DmlError::domain("recall is not monotone in K"));
    }
    Ok(report)
}

/// Evaluates a test set that serves as both query and index. K values not
/// below the set size are dropped. NMI clusters with k-means, k = number of
/// classes.
pub fn evaluate<T: Scalar>(set: &EmbeddingBatch<T>, seed: u64) -> Result<EvalReport> {
    let recall = recall_at_k_self(set, &usable_ks(set.len()))?;
    let pred = kmeans(set.view(), set.n_classes(), seed, 100);
    finish(recall, nmi(&pred, set.labels())?)
}

/// Evaluation of sign-binarized embeddings under Hamming distance.
pub fn evaluate_binary<T: Scalar>(set: &EmbeddingBatch<T>, seed: u64) -> Result<EvalReport> {
    let codes = binarize(set);
    let recall = recall_at_k_hamming(&codes, &codes, &usable_ks(set.len()), true)?;
    let bits = set.vectors().mapv(|v| if v > T::zero() { 1.0_f64 } else { 0.0 });
    let pred = kmeans(bits.view(), set.n_classes(), seed, 100);
    finish(recall, nmi(&pred, set.labels())?)
}
