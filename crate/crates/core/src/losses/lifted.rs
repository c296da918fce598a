use ndarray::Array2;

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise, pairwise_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::{hinge, Prepared};
use crate::plan::PairIndexSet;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedConfig<T> {
    pub margin: T,
    pub metric: Metric,
    pub normalize: bool,
}

impl<T: Scalar> Default for LiftedConfig<T> {
    fn default() -> Self {
        Self { margin: T::one(), metric: Metric::Euclidean, normalize: false }
    }
}

/// Lifted structured loss:
/// `1/(2|P|) sum_{(i,j) in P} [log(sum_{(i,k) in N} e^{M-d_ik} + sum_{(j,l) in N} e^{M-d_jl}) + d_ij]_+^2`.
///
/// Negative pairs are unordered; `(i,k)` contributes to both endpoints.
pub fn lifted_struct_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    pairs: &PairIndexSet,
    cfg: &LiftedConfig<T>,
) -> Result<DifferentiableResult<T>> {
    if pairs.positives.is_empty() {
        return Err(DmlError::domain("lifted structured loss needs a positive pair"));
    }
    pairs.validate(batch.labels())?;
    let n = batch.len();
    let mut neg_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &pairs.negatives {
        neg_of[a].push(b);
        neg_of[b].push(a);
    }
    let prep = Prepared::new(batch, cfg.normalize)?;
    let d = pairwise(prep.y.view(), cfg.metric)?;
    let inv_p = T::one() / T::of(pairs.positives.len() as f64);
    let half = T::of(0.5);

    let mut out = DifferentiableResult::zeros(n, batch.dim());
    let mut grad_d = Array2::zeros((n, n));
    let mut total = T::zero();
    for &(i, j) in &pairs.positives {
        // (row, col) of each exponent term
        let terms: Vec<(usize, usize)> =
            neg_of[i].iter().map(|&k| (i, k)).chain(neg_of[j].iter().map(|&l| (j, l))).collect();
        if terms.is_empty() {
            return Err(DmlError::domain(format!("positive pair ({i},{j}) has no negatives at either endpoint")));
        }
        let logits: Vec<T> = terms.iter().map(|&(r, c)| cfg.margin - d[[r, c]]).collect();
        let lse = log_sum_exp(logits.iter().copied());
        let arg = lse + d[[i, j]];
        out.note_kink(arg);
        let h = hinge(arg);
        total += h * h;
        if h > T::zero() {
            let dj = h * inv_p;
            grad_d[[i, j]] += dj;
            for (&(r, c), &z) in terms.iter().zip(&logits) {
                grad_d[[r, c]] -= dj * (z - lse).exp();
            }
        }
    }
    out.value = half * inv_p * total;
    out.grad_embeddings = prep.backward(pairwise_backward(prep.y.view(), cfg.metric, grad_d.view()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg() -> LiftedConfig<f64> {
        LiftedConfig { margin: 1.0, metric: Metric::Euclidean, normalize: false }
    }

    #[test]
    fn single_pair_single_negative() {
        // i=0, j=1 at distance 0.2; negative 2 is 1.0 from i and 1.2 from j.
        let b = EmbeddingBatch::new(array![[0.0], [0.2], [-1.0]], vec![0, 0, 1]).unwrap();
        let pairs = PairIndexSet { positives: vec![(0, 1)], negatives: vec![(0, 2)] };
        let r = lifted_struct_loss(&b, &pairs, &cfg()).unwrap();
        assert!((r.value - 0.02).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn separated_structure_is_near_zero() {
        let b = EmbeddingBatch::new(array![[0.0], [0.0], [100.0], [100.0]], vec![0, 0, 1, 1]).unwrap();
        let pairs = PairIndexSet::all_pairs(b.labels());
        let r = lifted_struct_loss(&b, &pairs, &cfg()).unwrap();
        assert!(r.value < 1e-30);
    }

    #[test]
    fn pair_without_negatives_is_an_error() {
        let b = EmbeddingBatch::new(array![[0.0], [0.2], [-1.0]], vec![0, 0, 1]).unwrap();
        let pairs = PairIndexSet { positives: vec![(0, 1)], negatives: vec![] };
        assert!(lifted_struct_loss(&b, &pairs, &cfg()).is_err());
    }
}
