use ndarray::Array2;

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise, pairwise_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::Prepared;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedListParams<T> {
    /// Negative boundary.
    pub alpha: T,
    /// Gap between the boundaries; positives must fall within `alpha - m`.
    pub m: T,
    pub lambda: T,
    /// Negative weighting `w = exp(T (alpha - d))`; 0 gives uniform weights.
    pub temperature: T,
    pub normalize: bool,
}

impl<T: Scalar> Default for RankedListParams<T> {
    fn default() -> Self {
        Self { alpha: T::of(1.2), m: T::of(0.4), lambda: T::one(), temperature: T::of(10.0), normalize: true }
    }
}

/// Ranked list loss. Per anchor: mean hinge over non-trivial positives
/// (`d > alpha - m`) plus `lambda` times the weighted mean hinge over
/// non-trivial negatives (`d < alpha`), averaged over anchors that have a
/// same-class partner.
pub fn ranked_list_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    params: &RankedListParams<T>,
) -> Result<DifferentiableResult<T>> {
    let RankedListParams { alpha, m, lambda, temperature, normalize } = *params;
    if !(m > T::zero() && m < alpha) {
        return Err(DmlError::domain("ranked list loss needs 0 < m < alpha"));
    }
    if lambda < T::zero() || temperature < T::zero() {
        return Err(DmlError::domain("lambda and temperature must be non-negative"));
    }
    let n = batch.len();
    let labels = batch.labels();
    let prep = Prepared::new(batch, normalize)?;
    let d = pairwise(prep.y.view(), Metric::Euclidean)?;
    let pos_boundary = alpha - m;

    let mut out = DifferentiableResult::zeros(n, batch.dim());
    let mut grad_d = Array2::zeros((n, n));
    // (anchor loss, positive grads, negative grads) accumulated per anchor
    let mut anchors = 0usize;
    let mut total = T::zero();
    let mut per_anchor: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
    for a in 0..n {
        let has_partner = (0..n).any(|j| j != a && labels[j] == labels[a]);
        if !has_partner {
            per_anchor.push(Vec::new());
            continue;
        }
        anchors += 1;
        let mut grads = Vec::new();

        let pos: Vec<(usize, T)> =
            (0..n).filter(|&j| j != a && labels[j] == labels[a]).map(|j| (j, d[[a, j]] - pos_boundary)).collect();
        for &(_, v) in &pos {
            out.note_kink(v);
        }
        let active: Vec<(usize, T)> = pos.into_iter().filter(|&(_, v)| v > T::zero()).collect();
        if !active.is_empty() {
            let inv = T::one() / T::of(active.len() as f64);
            total += active.iter().map(|&(_, v)| v).sum::<T>() * inv;
            grads.extend(active.iter().map(|&(j, _)| (j, inv)));
        }

        let neg: Vec<(usize, T)> = (0..n).filter(|&j| labels[j] != labels[a]).map(|j| (j, alpha - d[[a, j]])).collect();
        for &(_, v) in &neg {
            out.note_kink(v);
        }
        let active: Vec<(usize, T)> = neg.into_iter().filter(|&(_, v)| v > T::zero()).collect();
        if !active.is_empty() {
            let logits: Vec<T> = active.iter().map(|&(_, v)| temperature * v).collect();
            let lse = log_sum_exp(logits.iter().copied());
            let w: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
            let l_neg: T = w.iter().zip(&active).map(|(&w, &(_, v))| w * v).sum();
            total += lambda * l_neg;
            for (&wj, &(j, v)) in w.iter().zip(&active) {
                grads.push((j, lambda * wj * (-T::one() - temperature * (v - l_neg))));
            }
        }
        per_anchor.push(grads);
    }
    if anchors == 0 {
        return Err(DmlError::domain("no anchor has a same-class partner"));
    }
    let inv_a = T::one() / T::of(anchors as f64);
    for (a, grads) in per_anchor.into_iter().enumerate() {
        for (j, g) in grads {
            grad_d[[a, j]] += g * inv_a;
        }
    }
    out.value = total * inv_a;
    out.grad_embeddings = prep.backward(pairwise_backward(prep.y.view(), Metric::Euclidean, grad_d.view()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(t: f64) -> RankedListParams<f64> {
        RankedListParams { alpha: 1.2, m: 0.4, lambda: 1.0, temperature: t, normalize: false }
    }

    #[test]
    fn positive_on_sphere_boundary_is_zero() {
        let b = EmbeddingBatch::new(array![[0.0], [0.8]], vec![0, 0]).unwrap();
        let r = ranked_list_loss(&b, &params(10.0)).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn negative_on_boundary_is_zero() {
        let b = EmbeddingBatch::new(array![[0.0], [0.0], [1.2], [1.2]], vec![0, 0, 1, 1]).unwrap();
        let r = ranked_list_loss(&b, &params(10.0)).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn negative_inside_boundary_uniform_weight() {
        // every anchor sees one negative at distance 1.1
        let b = EmbeddingBatch::new(array![[0.0], [0.0], [1.1], [1.1]], vec![0, 0, 1, 1]).unwrap();
        let r = ranked_list_loss(&b, &params(0.0)).unwrap();
        assert!((r.value - 0.1).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn singleton_anchors_are_skipped() {
        let b = EmbeddingBatch::new(array![[0.0], [0.0], [5.0]], vec![0, 0, 1]).unwrap();
        assert!(ranked_list_loss(&b, &params(10.0)).unwrap().value.abs() < 1e-12);
        let b = EmbeddingBatch::new(array![[0.0], [5.0]], vec![0, 1]).unwrap();
        assert!(ranked_list_loss(&b, &params(10.0)).is_err());
    }
}
