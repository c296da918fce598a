use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DmlError, Result};
use crate::plan::{BatchPlan, Episode, EpisodeClass};

/// Sample ids per class: `index[c]` lists the dataset rows with label `c`.
pub type ClassIndex = Vec<Vec<usize>>;

/// Builds a [`ClassIndex`] from per-sample labels.
pub fn class_index(labels: &[usize]) -> ClassIndex {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut index = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        index[l].push(i);
    }
    index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub classes_per_episode: usize,
    pub support_per_class: usize,
    pub query_per_class: usize,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes_per_episode < 2 {
            return Err(DmlError::domain("an episode needs at least 2 classes"));
        }
        if self.support_per_class == 0 || self.query_per_class == 0 {
            return Err(DmlError::domain("support and query sizes must be positive"));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.support_per_class + self.query_per_class
    }

    pub fn batch_size(&self) -> usize {
        self.classes_per_episode * self.per_class()
    }
}

fn eligible(index: &ClassIndex, min: usize) -> Vec<usize> {
    (0..index.len()).filter(|&c| index[c].len() >= min).collect()
}

/// Picks `n_classes` eligible classes in sampled order.
fn pick_classes<R: Rng + ?Sized>(index: &ClassIndex, n_classes: usize, min: usize, rng: &mut R) -> Result<Vec<usize>> {
    let pool = eligible(index, min);
    if pool.len() < n_classes {
        return Err(DmlError::domain(format!(
            "need {n_classes} classes with at least {min} samples, only {} available (short by {})",
            pool.len(),
            n_classes - pool.len()
        )));
    }
    Ok(sample(rng, pool.len(), n_classes).into_iter().map(|i| pool[i]).collect())
}

fn pick_members<R: Rng + ?Sized>(ids: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    sample(rng, ids.len(), k).into_iter().map(|i| ids[i]).collect()
}

/// Two samples from each of `n_classes` distinct classes. Rows `2i` and
/// `2i + 1` of the batch form the `i`-th (anchor, positive) pair.
pub fn npairs_compose<R: Rng + ?Sized>(
    index: &ClassIndex,
    n_classes: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, BatchPlan)> {
    if n_classes < 2 {
        return Err(DmlError::domain("npairs batches need at least 2 classes"));
    }
    let classes = pick_classes(index, n_classes, 2, rng)?;
    let mut ids = Vec::with_capacity(2 * n_classes);
    let mut layout = Vec::with_capacity(n_classes);
    for c in classes {
        let pair = pick_members(&index[c], 2, rng);
        layout.push((ids.len(), ids.len() + 1));
        ids.extend(pair);
    }
    Ok((ids, BatchPlan::Npairs { layout }))
}

/// Concatenates `episodes_per_batch` independent episodes. Within an
/// episode no sample id repeats; class sets may overlap across episodes.
pub fn episodic_compose<R: Rng + ?Sized>(
    index: &ClassIndex,
    spec: EpisodeSpec,
    episodes_per_batch: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, BatchPlan)> {
    spec.validate()?;
    if episodes_per_batch == 0 {
        return Err(DmlError::domain("episodes_per_batch must be positive"));
    }
    let mut ids = Vec::with_capacity(spec.batch_size() * episodes_per_batch);
    let mut episodes = Vec::with_capacity(episodes_per_batch);
    for _ in 0..episodes_per_batch {
        let classes = pick_classes(index, spec.classes_per_episode, spec.per_class(), rng)?;
        let mut ep = Vec::with_capacity(classes.len());
        for c in classes {
            let members = pick_members(&index[c], spec.per_class(), rng);
            let start = ids.len();
            ids.extend(members);
            ep.push(EpisodeClass {
                label: c,
                support: (start..start + spec.support_per_class).collect(),
                query: (start + spec.support_per_class..ids.len()).collect(),
            });
        }
        episodes.push(Episode { classes: ep });
    }
    Ok((ids, BatchPlan::Episode { episodes }))
}

/// `n_classes x per_class` ids, grouped by class, sampled without replacement.
pub fn class_balanced_compose<R: Rng + ?Sized>(
    index: &ClassIndex,
    n_classes: usize,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n_classes == 0 || per_class == 0 {
        return Err(DmlError::domain("class-balanced batches need positive class and sample counts"));
    }
    let classes = pick_classes(index, n_classes, per_class, rng)?;
    Ok(classes.into_iter().flat_map(|c| pick_members(&index[c], per_class, rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplerRng;
    use std::collections::{BTreeMap, BTreeSet};

    fn labels_of(ids: &[usize], labels: &[usize]) -> Vec<usize> {
        ids.iter().map(|&i| labels[i]).collect()
    }

    #[test]
    fn npairs_forced_composition() {
        let labels: Vec<usize> = (0..4).flat_map(|c| [c; 5]).collect();
        let idx = class_index(&labels);
        let (ids, plan) = npairs_compose(&idx, 4, &mut SamplerRng::new(3)).unwrap();
        let mut counts = BTreeMap::new();
        for l in labels_of(&ids, &labels) {
            *counts.entry(l).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c == 2) && counts.len() == 4);
        for &(a, p) in plan.as_npairs().unwrap() {
            assert_eq!(labels[ids[a]], labels[ids[p]]);
            assert_ne!(ids[a], ids[p]);
        }
    }

    #[test]
    fn npairs_shortfall_is_reported() {
        let idx = class_index(&[0, 0, 1, 2]);
        let err = npairs_compose(&idx, 2, &mut SamplerRng::new(0)).unwrap_err();
        assert!(err.to_string().contains("short by 1"));
    }

    #[test]
    fn same_seed_same_batch() {
        let labels: Vec<usize> = (0..100).map(|i| i % 20).collect();
        let idx = class_index(&labels);
        let a = npairs_compose(&idx, 8, &mut SamplerRng::new(9)).unwrap();
        let b = npairs_compose(&idx, 8, &mut SamplerRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn episode_forced_shape() {
        let idx = class_index(&[0, 0, 1, 1]);
        let spec = EpisodeSpec { classes_per_episode: 2, support_per_class: 1, query_per_class: 1 };
        let (ids, plan) = episodic_compose(&idx, spec, 1, &mut SamplerRng::new(1)).unwrap();
        assert_eq!(ids.len(), 4);
        let mut l = labels_of(&ids, &[0, 0, 1, 1]);
        l.sort();
        assert_eq!(l, vec![0, 0, 1, 1]);
        assert_eq!(plan.as_episodes().unwrap().len(), 1);
    }

    #[test]
    fn episodes_never_repeat_within() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let idx = class_index(&labels);
        let spec = EpisodeSpec { classes_per_episode: 3, support_per_class: 2, query_per_class: 3 };
        let (ids, plan) = episodic_compose(&idx, spec, 4, &mut SamplerRng::new(5)).unwrap();
        for ep in plan.as_episodes().unwrap() {
            let rows: Vec<usize> = ep.classes.iter().flat_map(|c| c.support.iter().chain(&c.query)).copied().collect();
            let uniq: BTreeSet<usize> = rows.iter().map(|&r| ids[r]).collect();
            assert_eq!(uniq.len(), rows.len());
            for c in &ep.classes {
                assert!(c.support.iter().chain(&c.query).all(|&r| labels[ids[r]] == c.label));
            }
        }
    }

    #[test]
    fn balanced_two_by_two() {
        let idx = class_index(&[0, 1, 0, 1]);
        let mut ids = class_balanced_compose(&idx, 2, 2, &mut SamplerRng::new(0)).unwrap();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn balanced_default_size() {
        let labels: Vec<usize> = (0..400).map(|i| i % 40).collect();
        let ids = class_balanced_compose(&class_index(&labels), 30, 4, &mut SamplerRng::new(0)).unwrap();
        assert_eq!(ids.len(), 120);
        assert!(class_balanced_compose(&class_index(&[0, 1]), 2, 2, &mut SamplerRng::new(0)).is_err());
    }
}
