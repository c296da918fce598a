use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::distance::sq_dist;
use crate::error::{DmlError, Result};
use crate::eval::binary::BinaryCodes;
use crate::scalar::Scalar;

/// The K values reported by default.
pub const DEFAULT_KS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMetric {
    Euclidean,
    Hamming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub metric: RetrievalMetric,
}

/// Rank of the first same-label neighbour for every query, or `None` when
/// the index holds no item with the query's label. Neighbours are ordered by
/// `(distance, index)`.
fn first_hit_ranks<D, F>(
    n_query: usize,
    index_labels: &[usize],
    query_labels: &[usize],
    exclude_self: bool,
    dist: F,
) -> Vec<Option<usize>>
where
    D: PartialOrd + Copy + Send,
    F: Fn(usize, usize) -> D + Sync,
{
    (0..n_query)
        .into_par_iter()
        .map(|q| {
            let candidates = |i: &usize| !(exclude_self && *i == q);
            let dists: Vec<(usize, D)> = (0..index_labels.len()).filter(candidates).map(|i| (i, dist(q, i))).collect();
            let before = |a: (usize, D), b: (usize, D)| a.1 < b.1 || (a.1 == b.1 && a.0 < b.0);
            let best = dists.iter().copied().filter(|&(i, _)| index_labels[i] == query_labels[q]).reduce(|a, b| {
                if before(b, a) {
                    b
                } else {
                    a
                }
            })?;
            Some(dists.iter().filter(|&&c| before(c, best)).count())
        })
        .collect()
}

fn report(ranks: &[Option<usize>], ks: &[usize], metric: RetrievalMetric) -> RecallReport {
    let n = ranks.len();
    let recall_at = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect();
    RecallReport { recall_at, n_queries: n, metric }
}

fn check_ks(ks: &[usize], index_size: usize) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(DmlError::domain("K values must be positive"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k >= index_size) {
        return Err(DmlError::domain(format!("K={k} is not below the index size {index_size}")));
    }
    Ok(())
}

/// Exact Recall@K with separate index and query sets (euclidean).
pub fn recall_at_k<T: Scalar>(
    index: &EmbeddingBatch<T>,
    query: &EmbeddingBatch<T>,
    ks: &[usize],
) -> Result<RecallReport> {
    check_ks(ks, index.len())?;
    if index.dim() != query.dim() {
        return Err(DmlError::shape("index and query dimensions differ"));
    }
    let (xi, xq) = (index.view(), query.view());
    let ranks =
        first_hit_ranks(query.len(), index.labels(), query.labels(), false, |q, i| sq_dist(xq.row(q), xi.row(i)));
    Ok(report(&ranks, ks, RetrievalMetric::Euclidean))
}

/// Exact Recall@K where the set is both query and index; each query is
/// excluded from its own neighbour list.
pub fn recall_at_k_self<T: Scalar>(set: &EmbeddingBatch<T>, ks: &[usize]) -> Result<RecallReport> {
    check_ks(ks, set.len())?;
    let x = set.view();
    let ranks = first_hit_ranks(set.len(), set.labels(), set.labels(), true, |q, i| sq_dist(x.row(q), x.row(i)));
    Ok(report(&ranks, ks, RetrievalMetric::Euclidean))
}

/// Recall@K over binary codes under Hamming distance.
pub fn recall_at_k_hamming(
    index: &BinaryCodes,
    query: &BinaryCodes,
    ks: &[usize],
    same_set: bool,
) -> Result<RecallReport> {
    check_ks(ks, index.len())?;
    if index.n_bits() != query.n_bits() {
        return Err(DmlError::shape("code lengths differ"));
    }
    let ranks =
        first_hit_ranks(query.len(), index.labels(), query.labels(), same_set, |q, i| query.hamming(q, index, i));
    Ok(report(&ranks, ks, RetrievalMetric::Hamming))
}
