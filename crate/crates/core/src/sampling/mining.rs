use rand::Rng;

use crate::batch::EmbeddingBatch;
use crate::distance::DistanceMatrix;
use crate::error::{DmlError, Result};
use crate::plan::{BatchPlan, PairIndexSet, Triplet, TripletIndexSet};
use crate::scalar::Scalar;

/// Semi-hard negative per ordered `(anchor, positive)` pair: the closest
/// negative strictly farther than the positive, or, when none exists, the
/// farthest negative. Ties go to the lowest index.
pub fn semi_hard_mine<T: Scalar>(batch: &EmbeddingBatch<T>, distances: &DistanceMatrix<T>) -> Result<BatchPlan> {
    let labels = batch.labels();
    let n = labels.len();
    if distances.len() != n {
        return Err(DmlError::shape("distance matrix does not match the batch"));
    }
    let d = &distances.values;
    let mut triplets = Vec::new();
    for a in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if negatives.is_empty() {
            continue;
        }
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            let dap = d[[a, p]];
            let mut semi: Option<usize> = None;
            let mut far = negatives[0];
            for &k in &negatives {
                let dk = d[[a, k]];
                if dk > dap && semi.is_none_or(|s| dk < d[[a, s]]) {
                    semi = Some(k);
                }
                if dk > d[[a, far]] {
                    far = k;
                }
            }
            triplets.push(Triplet { anchor: a, positive: p, negative: semi.unwrap_or(far) });
        }
    }
    if triplets.is_empty() {
        return Err(DmlError::domain("no anchor has both a positive and a negative"));
    }
    Ok(BatchPlan::Triplets(TripletIndexSet::new(triplets)))
}

/// Clamp applied to inverse-density weights, expressed relative to the
/// smallest weight among the candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwClip {
    pub min: f64,
    pub max: f64,
}

impl Default for DwClip {
    fn default() -> Self {
        Self { min: 0.0, max: 1e4 }
    }
}

/// `log q(d)` for the density of pairwise distances between points drawn
/// uniformly on the unit sphere in `dim` dimensions, up to a constant:
/// `q(d) ~ d^(dim-2) (1 - d^2/4)^((dim-3)/2)`.
pub fn log_sphere_distance_density(d: f64, dim: usize) -> f64 {
    let n = dim as f64;
    (n - 2.0) * d.ln() + (n - 3.0) / 2.0 * (1.0 - d * d / 4.0).ln()
}

/// Sampling probabilities proportional to clipped `1/q(d)`.
/// Returns `None` when `dim < 3` (density undefined; caller samples uniformly).
pub fn inverse_density_probabilities(dists: &[f64], dim: usize, clip: DwClip) -> Option<Vec<f64>> {
    if dim < 3 {
        return None;
    }
    // log(1/q); non-finite values (d = 0 or d >= 2) mean unbounded weight
    let log_w: Vec<f64> = dists
        .iter()
        .map(|&d| {
            let v = -log_sphere_distance_density(d, dim);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        })
        .collect();
    let floor = log_w.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = if floor.is_infinite() {
        vec![1.0; dists.len()]
    } else {
        log_w.iter().map(|&l| (l - floor).exp().clamp(clip.min, clip.max)).collect()
    };
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        Some(w.into_iter().map(|v| v / total).collect())
    } else {
        Some(vec![1.0 / dists.len() as f64; dists.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwDraw {
    pub index: usize,
    /// Set when the embedding dimension is below 3 and sampling fell back to uniform.
    pub uniform_fallback: bool,
}

/// Draws a negative for `anchor` with probability proportional to the
/// clipped inverse of the unit-sphere distance density.
pub fn distance_weighted_sample<T: Scalar, R: Rng + ?Sized>(
    batch: &EmbeddingBatch<T>,
    distances: &DistanceMatrix<T>,
    anchor: usize,
    rng: &mut R,
    clip: DwClip,
) -> Result<DwDraw> {
    let labels = batch.labels();
    if anchor >= labels.len() {
        return Err(DmlError::shape(format!("anchor {anchor} out of range")));
    }
    let negatives: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != labels[anchor]).collect();
    if negatives.is_empty() {
        return Err(DmlError::domain(format!("anchor {anchor} has no negative")));
    }
    let dists: Vec<f64> = negatives.iter().map(|&j| distances.get(anchor, j).to_f64_lossy()).collect();
    let probs = inverse_density_probabilities(&dists, batch.dim(), clip);
    let uniform_fallback = probs.is_none();
    let pick = match probs {
        None => rng.random_range(0..negatives.len()),
        Some(p) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = negatives.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        }
    };
    Ok(DwDraw { index: negatives[pick], uniform_fallback })
}

/// Pairs for the margin loss: every ordered positive pair plus one
/// distance-weighted negative per positive pair, sharing its anchor.
pub fn distance_weighted_pairs<T: Scalar, R: Rng + ?Sized>(
    batch: &EmbeddingBatch<T>,
    distances: &DistanceMatrix<T>,
    rng: &mut R,
    clip: DwClip,
) -> Result<BatchPlan> {
    let labels = batch.labels();
    let n = labels.len();
    let mut pairs = PairIndexSet::default();
    for a in 0..n {
        if !(0..n).any(|j| labels[j] != labels[a]) {
            continue;
        }
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            pairs.positives.push((a, p));
            let neg = distance_weighted_sample(batch, distances, a, rng, clip)?;
            pairs.negatives.push((a, neg.index));
        }
    }
    if pairs.positives.is_empty() {
        return Err(DmlError::domain("no anchor has both a positive and a negative"));
    }
    Ok(BatchPlan::Pairs(pairs))
}
