use ndarray::{Array1, Array2};

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise, pairwise_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::{hinge, Prepared};
use crate::plan::PairIndexSet;
use crate::scalar::Scalar;

/// Learnable per-class boundary `beta` and fixed separation `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLossParams<T> {
    pub beta: Array1<T>,
    pub alpha: T,
    pub trainable_beta: bool,
    pub normalize: bool,
}

impl<T: Scalar> MarginLossParams<T> {
    pub fn new(n_classes: usize) -> Self {
        Self {
            beta: Array1::from_elem(n_classes, T::of(1.2)),
            alpha: T::of(0.2),
            trainable_beta: true,
            normalize: true,
        }
    }
}

/// Mean over pairs of `[alpha + d - beta_y]_+` (positive) and
/// `[alpha - d + beta_y]_+` (negative), with `y` the class of the first row
/// and `d` euclidean.
pub fn margin_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    pairs: &PairIndexSet,
    params: &MarginLossParams<T>,
) -> Result<DifferentiableResult<T>> {
    if !(params.alpha > T::zero()) {
        return Err(DmlError::domain("margin alpha must be positive"));
    }
    if params.beta.iter().any(|b| !b.is_finite()) {
        return Err(DmlError::domain("beta must be finite"));
    }
    let total_pairs = pairs.positives.len() + pairs.negatives.len();
    if total_pairs == 0 {
        return Err(DmlError::domain("margin loss needs at least one pair"));
    }
    pairs.validate(batch.labels())?;
    let labels = batch.labels();
    if let Some(&c) = labels.iter().find(|&&c| c >= params.beta.len()) {
        return Err(DmlError::domain(format!("class {c} has no beta entry")));
    }
    let n = batch.len();
    let prep = Prepared::new(batch, params.normalize)?;
    let d = pairwise(prep.y.view(), Metric::Euclidean)?;
    let inv = T::one() / T::of(total_pairs as f64);

    let mut out = DifferentiableResult::zeros(n, batch.dim());
    let mut grad_d = Array2::zeros((n, n));
    let mut grad_beta = Array1::zeros(params.beta.len());
    let mut total = T::zero();
    for (pairs, sign) in [(&pairs.positives, T::one()), (&pairs.negatives, -T::one())] {
        for &(i, j) in pairs {
            let c = labels[i];
            let arg = params.alpha + sign * (d[[i, j]] - params.beta[c]);
            out.note_kink(arg);
            total += hinge(arg);
            if arg > T::zero() {
                grad_d[[i, j]] += sign * inv;
                grad_beta[c] -= sign * inv;
            }
        }
    }
    out.value = total * inv;
    out.grad_embeddings = prep.backward(pairwise_backward(prep.y.view(), Metric::Euclidean, grad_d.view()));
    if params.trainable_beta {
        out.grad_params.insert("beta".into(), grad_beta.into_dyn());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params() -> MarginLossParams<f64> {
        MarginLossParams { beta: array![1.2, 1.2], alpha: 0.2, trainable_beta: true, normalize: false }
    }

    #[test]
    fn positive_on_boundary_is_zero() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 0]).unwrap();
        let pairs = PairIndexSet { positives: vec![(0, 1)], negatives: vec![] };
        let r = margin_loss(&b, &pairs, &params()).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn negative_inside_margin() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 1]).unwrap();
        let pairs = PairIndexSet { positives: vec![], negatives: vec![(0, 1)] };
        let r = margin_loss(&b, &pairs, &params()).unwrap();
        assert!((r.value - 0.4).abs() < 1e-12);
        let gb = &r.grad_params["beta"];
        assert_eq!(gb[[0]], 1.0);
        assert_eq!(gb[[1]], 0.0);
    }

    #[test]
    fn missing_beta_is_an_error() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 5]).unwrap();
        let pairs = PairIndexSet { positives: vec![], negatives: vec![(0, 1)] };
        assert!(margin_loss(&b, &pairs, &params()).is_err());
    }

    #[test]
    fn frozen_beta_exposes_no_parameters() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 1]).unwrap();
        let pairs = PairIndexSet { positives: vec![], negatives: vec![(0, 1)] };
        let r = margin_loss(&b, &pairs, &MarginLossParams { trainable_beta: false, ..params() }).unwrap();
        assert!(r.grad_params.is_empty());
    }
}
