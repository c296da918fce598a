//! Facility location on euclidean distances: score, nearest-facility
//! assignment, per-class oracle medoids and loss-augmented inference.

use itertools::Itertools;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::distance::{pairwise, Metric};
use crate::error::{DmlError, Result};
use crate::eval::nmi::nmi;
use crate::scalar::Scalar;

/// Largest N accepted by exhaustive inference.
pub const EXHAUSTIVE_MAX_N: usize = 12;

/// Sorted, distinct, non-empty medoid indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FacilitySet {
    indices: Vec<usize>,
}

impl FacilitySet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(DmlError::domain("facility set must be non-empty"));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= n => Err(DmlError::shape(format!("facility {i} out of range for {n} points"))),
            _ => Ok(()),
        }
    }
}

/// Cluster id per point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
}

impl ClusterAssignment {
    /// Relabels clusters `0..k` in order of first appearance.
    pub fn canonicalize(&self) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment = self
            .assignment
            .iter()
            .map(|&c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
            .collect();
        Self { assignment }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    Greedy,
    GreedyWithSwaps,
    Exhaustive,
}

/// Euclidean distance matrix used by every facility routine.
pub fn euclidean_matrix<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    pairwise(x, Metric::Euclidean).expect("euclidean distances are total")
}

/// Nearest facility per point (lowest facility index on ties) and its distance.
pub(crate) fn nearest<T: Scalar>(d: &Array2<T>, s: &[usize]) -> Vec<(usize, T)> {
    (0..d.nrows())
        .map(|i| {
            let mut best = (s[0], d[[i, s[0]]]);
            for &j in &s[1..] {
                if d[[i, j]] < best.1 {
                    best = (j, d[[i, j]]);
                }
            }
            best
        })
        .collect()
}

pub(crate) fn score_from<T: Scalar>(d: &Array2<T>, s: &[usize]) -> T {
    -nearest(d, s).into_iter().map(|(_, v)| v).sum::<T>()
}

/// `F(X, S) = -sum_i min_{j in S} ||x_i - x_j||`.
pub fn facility_score<T: Scalar>(x: &EmbeddingBatch<T>, s: &FacilitySet) -> Result<T> {
    s.check(x.len())?;
    Ok(score_from(&euclidean_matrix(x.view()), s.indices()))
}

/// Assigns every point to its nearest facility; cluster id is the
/// facility's position in the sorted set.
pub fn assign_to_facilities<T: Scalar>(x: &EmbeddingBatch<T>, s: &FacilitySet) -> Result<ClusterAssignment> {
    s.check(x.len())?;
    Ok(assignment_from(&euclidean_matrix(x.view()), s.indices()))
}

pub(crate) fn assignment_from<T: Scalar>(d: &Array2<T>, s: &[usize]) -> ClusterAssignment {
    let pos = |j: usize| s.iter().position(|&f| f == j).expect("facility in set");
    ClusterAssignment { assignment: nearest(d, s).into_iter().map(|(j, _)| pos(j)).collect() }
}

/// Oracle clustering score with one in-class medoid per ground-truth class.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleClustering<T> {
    pub score: T,
    /// Medoid row per class, ordered by class id.
    pub medoids: Vec<usize>,
    /// Per point, the medoid of its own class.
    pub medoid_of: Vec<usize>,
    /// Smallest gap between a class's best and runner-up medoid cost.
    pub gap: T,
}

/// `F~(X) = sum_k max_{j in class k} F(X_k, {j})`, exhaustive per class.
pub fn oracle_clustering_score<T: Scalar>(x: &EmbeddingBatch<T>) -> Result<OracleClustering<T>> {
    Ok(oracle_from(&euclidean_matrix(x.view()), x.labels()))
}

pub(crate) fn oracle_from<T: Scalar>(d: &Array2<T>, labels: &[usize]) -> OracleClustering<T> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut medoids = Vec::with_capacity(classes.len());
    let mut gap = T::infinity();
    for &c in &classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let costs: Vec<(usize, T)> =
            members.iter().map(|&j| (j, members.iter().map(|&i| d[[i, j]]).sum::<T>())).collect();
        let mut best = costs[0];
        for &(j, cost) in &costs[1..] {
            if cost < best.1 {
                best = (j, cost);
            }
        }
        for &(j, cost) in &costs {
            if j != best.0 && cost - best.1 < gap {
                gap = cost - best.1;
            }
        }
        medoids.push(best.0);
    }
    let medoid_of: Vec<usize> =
        labels.iter().map(|l| medoids[classes.binary_search(l).expect("class present")]).collect();
    // summed in point order so that F(X, medoids) == F~ bit-for-bit when every
    // point's nearest medoid is its own
    let score = -(0..labels.len()).map(|i| d[[i, medoid_of[i]]]).sum::<T>();
    OracleClustering { score, medoids, medoid_of, gap }
}

/// Result of loss-augmented inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub set: FacilitySet,
    /// `F(X, S) + gamma * (1 - NMI(g(S), Y))` at the returned set.
    pub objective: T,
    /// Smallest margin by which a selection decision was won.
    pub decision_gap: T,
}

pub(crate) fn augmented_objective<T: Scalar>(d: &Array2<T>, labels: &[usize], gamma: T, s: &[usize]) -> T {
    let near = nearest(d, s);
    let f = -near.iter().map(|&(_, v)| v).sum::<T>();
    let assign: Vec<usize> = near.iter().map(|&(j, _)| j).collect();
    let delta = 1.0 - nmi(&assign, labels).expect("equal lengths");
    f + gamma * T::of(delta)
}

/// Approximately (greedy modes) or exactly maximizes
/// `F(X, S) + gamma * (1 - NMI(g(S), Y))` over sets of size `k`.
pub fn loss_augmented_inference<T: Scalar>(
    x: &EmbeddingBatch<T>,
    gamma: T,
    k: usize,
    mode: InferenceMode,
) -> Result<Inference<T>> {
    inference_from(&euclidean_matrix(x.view()), x.labels(), gamma, k, mode)
}

pub(crate) fn inference_from<T: Scalar>(
    d: &Array2<T>,
    labels: &[usize],
    gamma: T,
    k: usize,
    mode: InferenceMode,
) -> Result<Inference<T>> {
    let n = d.nrows();
    if k == 0 || k > n {
        return Err(DmlError::domain(format!("cannot choose {k} facilities among {n} points")));
    }
    match mode {
        InferenceMode::Exhaustive => exhaustive(d, labels, gamma, k),
        InferenceMode::Greedy => greedy(d, labels, gamma, k),
        InferenceMode::GreedyWithSwaps => {
            let g = greedy(d, labels, gamma, k)?;
            swap_climb(d, labels, gamma, g)
        }
    }
}

fn exhaustive<T: Scalar>(d: &Array2<T>, labels: &[usize], gamma: T, k: usize) -> Result<Inference<T>> {
    let n = d.nrows();
    if n > EXHAUSTIVE_MAX_N {
        return Err(DmlError::Guard(format!("exhaustive inference limited to {EXHAUSTIVE_MAX_N} points, got {n}")));
    }
    let mut best: Option<(Vec<usize>, T)> = None;
    let mut second = T::neg_infinity();
    for s in (0..n).combinations(k) {
        let obj = augmented_objective(d, labels, gamma, &s);
        match &best {
            Some((_, b)) if obj <= *b => second = second.max(obj),
            Some((_, b)) => {
                second = *b;
                best = Some((s, obj));
            }
            None => best = Some((s, obj)),
        }
    }
    let (s, objective) = best.expect("at least one combination");
    Ok(Inference { set: FacilitySet::new(s)?, objective, decision_gap: objective - second })
}

fn greedy<T: Scalar>(d: &Array2<T>, labels: &[usize], gamma: T, k: usize) -> Result<Inference<T>> {
    let n = d.nrows();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut mins = vec![T::infinity(); n];
    let mut owner = vec![usize::MAX; n];
    let mut gap = T::infinity();
    let mut objective = T::neg_infinity();
    for _ in 0..k {
        let mut best: Option<(usize, T)> = None;
        let mut runner = T::neg_infinity();
        let mut assign = vec![0usize; n];
        for c in (0..n).filter(|c| !chosen.contains(c)) {
            let mut f = T::zero();
            for i in 0..n {
                let dc = d[[i, c]];
                let take = dc < mins[i] || (dc == mins[i] && c < owner[i]);
                if take {
                    f -= dc;
                    assign[i] = c;
                } else {
                    f -= mins[i];
                    assign[i] = owner[i];
                }
            }
            let obj = f + gamma * T::of(1.0 - nmi(&assign, labels)?);
            match best {
                Some((_, b)) if obj <= b => runner = runner.max(obj),
                Some((_, b)) => {
                    runner = b;
                    best = Some((c, obj));
                }
                None => best = Some((c, obj)),
            }
        }
        let (c, obj) = best.expect("k <= n leaves a candidate");
        gap = gap.min(obj - runner);
        objective = obj;
        chosen.push(c);
        for i in 0..n {
            let dc = d[[i, c]];
            if dc < mins[i] || (dc == mins[i] && c < owner[i]) {
                mins[i] = dc;
                owner[i] = c;
            }
        }
    }
    let set = FacilitySet::new(chosen)?;
    // recompute on the sorted set so every mode reports the same quantity
    let objective_sorted = augmented_objective(d, labels, gamma, set.indices());
    debug_assert!((objective_sorted - objective).abs() <= T::of(1e-9) * (T::one() + objective.abs()));
    Ok(Inference { set, objective: objective_sorted, decision_gap: gap })
}

fn swap_climb<T: Scalar>(d: &Array2<T>, labels: &[usize], gamma: T, start: Inference<T>) -> Result<Inference<T>> {
    let n = d.nrows();
    let mut current = start.set.indices().to_vec();
    let mut value = start.objective;
    let mut gap = start.decision_gap;
    loop {
        let mut best: Option<(Vec<usize>, T)> = None;
        for pos in 0..current.len() {
            for c in (0..n).filter(|c| !current.contains(c)) {
                let mut s = current.clone();
                s[pos] = c;
                s.sort_unstable();
                let obj = augmented_objective(d, labels, gamma, &s);
                if obj > best.as_ref().map_or(T::neg_infinity(), |b| b.1) {
                    best = Some((s, obj));
                }
            }
        }
        match best {
            Some((s, obj)) if obj > value => {
                current = s;
                value = obj;
            }
            Some((_, obj)) => {
                gap = gap.min(value - obj);
                break;
            }
            None => break,
        }
    }
    Ok(Inference { set: FacilitySet::new(current)?, objective: value, decision_gap: gap })
}
