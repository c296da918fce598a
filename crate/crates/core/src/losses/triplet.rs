use ndarray::Array2;

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise, pairwise_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::{hinge, Prepared};
use crate::plan::TripletIndexSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig<T> {
    pub margin: T,
    pub metric: Metric,
    pub normalize: bool,
}

impl<T: Scalar> Default for TripletConfig<T> {
    fn default() -> Self {
        Self { margin: T::of(0.2), metric: Metric::SquaredEuclidean, normalize: true }
    }
}

/// Mean over triplets of `[d(a,p) - d(a,n) + M]_+`.
pub fn triplet_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    triplets: &TripletIndexSet,
    cfg: &TripletConfig<T>,
) -> Result<DifferentiableResult<T>> {
    if triplets.is_empty() {
        return Err(DmlError::domain("triplet loss needs at least one triplet"));
    }
    if !(cfg.margin > T::zero()) {
        return Err(DmlError::domain("triplet margin must be positive"));
    }
    triplets.validate(batch.labels())?;
    let prep = Prepared::new(batch, cfg.normalize)?;
    let d = pairwise(prep.y.view(), cfg.metric)?;
    let n = batch.len();
    let inv = T::one() / T::of(triplets.len() as f64);
    let mut out = DifferentiableResult::zeros(n, batch.dim());
    let mut grad_d = Array2::zeros((n, n));
    let mut total = T::zero();
    for t in &triplets.triplets {
        let arg = d[[t.anchor, t.positive]] - d[[t.anchor, t.negative]] + cfg.margin;
        out.note_kink(arg);
        total += hinge(arg);
        if arg > T::zero() {
            grad_d[[t.anchor, t.positive]] += inv;
            grad_d[[t.anchor, t.negative]] -= inv;
        }
    }
    out.value = total * inv;
    out.grad_embeddings = prep.backward(pairwise_backward(prep.y.view(), cfg.metric, grad_d.view()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Triplet;
    use ndarray::array;

    fn cfg(margin: f64) -> TripletConfig<f64> {
        TripletConfig { margin, metric: Metric::Euclidean, normalize: false }
    }

    fn one() -> TripletIndexSet {
        TripletIndexSet::new(vec![Triplet { anchor: 0, positive: 1, negative: 2 }])
    }

    #[test]
    fn satisfied_margin_is_zero_with_zero_gradient() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0], [3.0]], vec![0, 0, 1]).unwrap();
        let r = triplet_loss(&b, &one(), &cfg(0.5)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_embeddings.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn violated_margin_value() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0], [1.2]], vec![0, 0, 1]).unwrap();
        let r = triplet_loss(&b, &one(), &cfg(0.5)).unwrap();
        assert!((r.value - 0.3).abs() < 1e-12);
        // d/da [|a-p| - |a-n|] = -1 + 1 = 0, d/dp = +1, d/dn = -1
        assert!((r.grad_embeddings[[0, 0]]).abs() < 1e-12);
        assert!((r.grad_embeddings[[1, 0]] - 1.0).abs() < 1e-12);
        assert!((r.grad_embeddings[[2, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_an_error() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 0]).unwrap();
        assert!(triplet_loss(&b, &TripletIndexSet::default(), &cfg(0.5)).is_err());
    }
}
