//! Index-level batch recipes produced by samplers and consumed by losses.

use serde::{Deserialize, Serialize};

use crate::error::{DmlError, Result};

/// Anchor/positive/negative row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletIndexSet {
    pub triplets: Vec<Triplet>,
}

impl TripletIndexSet {
    pub fn new(triplets: Vec<Triplet>) -> Self {
        Self { triplets }
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        for t in &self.triplets {
            let n = labels.len();
            if t.anchor >= n || t.positive >= n || t.negative >= n {
                return Err(DmlError::shape(format!("triplet {t:?} out of range for {n} rows")));
            }
            if t.anchor == t.positive
                || labels[t.anchor] != labels[t.positive]
                || labels[t.anchor] == labels[t.negative]
            {
                return Err(DmlError::domain(format!("triplet {t:?} violates label constraints")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Positive (same label, distinct rows) and negative (different label) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndexSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairIndexSet {
    /// Every unordered positive pair `i < j` and every unordered negative pair.
    pub fn all_pairs(labels: &[usize]) -> Self {
        let mut out = Self::default();
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                if labels[i] == labels[j] {
                    out.positives.push((i, j));
                } else {
                    out.negatives.push((i, j));
                }
            }
        }
        out
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for &(i, j) in &self.positives {
            if i >= n || j >= n {
                return Err(DmlError::shape(format!("pair ({i},{j}) out of range for {n} rows")));
            }
            if i == j || labels[i] != labels[j] {
                return Err(DmlError::domain(format!("({i},{j}) is not a positive pair")));
            }
        }
        for &(i, j) in &self.negatives {
            if i >= n || j >= n {
                return Err(DmlError::shape(format!("pair ({i},{j}) out of range for {n} rows")));
            }
            if labels[i] == labels[j] {
                return Err(DmlError::domain(format!("({i},{j}) is not a negative pair")));
            }
        }
        Ok(())
    }
}

/// Per-class support and query rows of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeClass {
    pub label: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub classes: Vec<EpisodeClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Triplets,
    Pairs,
    Npairs,
    Episode,
}

/// Uniform carrier between samplers and losses. Exactly one layout exists
/// per variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BatchPlan {
    Triplets(TripletIndexSet),
    Pairs(PairIndexSet),
    /// One `(anchor, positive)` row pair per class, classes distinct.
    Npairs {
        layout: Vec<(usize, usize)>,
    },
    Episode {
        episodes: Vec<Episode>,
    },
}

impl BatchPlan {
    pub fn kind(&self) -> PlanKind {
        match self {
            BatchPlan::Triplets(_) => PlanKind::Triplets,
            BatchPlan::Pairs(_) => PlanKind::Pairs,
            BatchPlan::Npairs { .. } => PlanKind::Npairs,
            BatchPlan::Episode { .. } => PlanKind::Episode,
        }
    }

    pub fn as_triplets(&self) -> Result<&TripletIndexSet> {
        match self {
            BatchPlan::Triplets(t) => Ok(t),
            other => Err(wrong_kind(PlanKind::Triplets, other)),
        }
    }

    pub fn as_pairs(&self) -> Result<&PairIndexSet> {
        match self {
            BatchPlan::Pairs(p) => Ok(p),
            other => Err(wrong_kind(PlanKind::Pairs, other)),
        }
    }

    pub fn as_npairs(&self) -> Result<&[(usize, usize)]> {
        match self {
            BatchPlan::Npairs { layout } => Ok(layout),
            other => Err(wrong_kind(PlanKind::Npairs, other)),
        }
    }

    pub fn as_episodes(&self) -> Result<&[Episode]> {
        match self {
            BatchPlan::Episode { episodes } => Ok(episodes),
            other => Err(wrong_kind(PlanKind::Episode, other)),
        }
    }

    /// Re-indexes every row reference through `map` (old row -> new row).
    pub fn remap(&self, map: &[usize]) -> Self {
        let m = |i: usize| map[i];
        match self {
            BatchPlan::Triplets(t) => BatchPlan::Triplets(TripletIndexSet::new(
                t.triplets
                    .iter()
                    .map(|t| Triplet { anchor: m(t.anchor), positive: m(t.positive), negative: m(t.negative) })
                    .collect(),
            )),
            BatchPlan::Pairs(p) => BatchPlan::Pairs(PairIndexSet {
                positives: p.positives.iter().map(|&(i, j)| (m(i), m(j))).collect(),
                negatives: p.negatives.iter().map(|&(i, j)| (m(i), m(j))).collect(),
            }),
            BatchPlan::Npairs { layout } => {
                BatchPlan::Npairs { layout: layout.iter().map(|&(a, p)| (m(a), m(p))).collect() }
            }
            BatchPlan::Episode { episodes } => BatchPlan::Episode {
                episodes: episodes
                    .iter()
                    .map(|e| Episode {
                        classes: e
                            .classes
                            .iter()
                            .map(|c| EpisodeClass {
                                label: c.label,
                                support: c.support.iter().map(|&i| m(i)).collect(),
                                query: c.query.iter().map(|&i| m(i)).collect(),
                            })
                            .collect(),
                    })
                    .collect(),
            },
        }
    }
}

fn wrong_kind(want: PlanKind, got: &BatchPlan) -> DmlError {
    DmlError::domain(format!("expected a {want:?} plan, got {:?}", got.kind()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pairs_partitions_by_label() {
        let p = PairIndexSet::all_pairs(&[0, 0, 1, 1]);
        assert_eq!(p.positives, vec![(0, 1), (2, 3)]);
        assert_eq!(p.negatives.len(), 4);
        p.validate(&[0, 0, 1, 1]).unwrap();
    }

    #[test]
    fn triplet_validation() {
        let ok = TripletIndexSet::new(vec![Triplet { anchor: 0, positive: 1, negative: 2 }]);
        ok.validate(&[0, 0, 1]).unwrap();
        let bad = TripletIndexSet::new(vec![Triplet { anchor: 0, positive: 2, negative: 1 }]);
        assert!(bad.validate(&[0, 0, 1]).is_err());
    }

    #[test]
    fn plan_accessors_check_kind() {
        let plan = BatchPlan::Npairs { layout: vec![(0, 1)] };
        assert!(plan.as_npairs().is_ok());
        assert!(plan.as_triplets().is_err());
        assert_eq!(plan.kind(), PlanKind::Npairs);
    }
}
