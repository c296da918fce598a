use ndarray::{Array2, ArrayView2};

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::Prepared;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpairsConfig<T> {
    /// Weight of the mean squared embedding norm.
    pub l2_reg: T,
    pub normalize: bool,
    /// Average with the loss obtained by swapping anchors and positives.
    pub reversed: bool,
}

impl<T: Scalar> Default for NpairsConfig<T> {
    fn default() -> Self {
        Self { l2_reg: T::of(0.002), normalize: false, reversed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularParams<T> {
    pub alpha_degrees: T,
    /// When set, returns `npairs + lambda * angular` on the normalized embeddings.
    pub combine_with_npairs: Option<T>,
}

impl<T: Scalar> Default for AngularParams<T> {
    fn default() -> Self {
        Self { alpha_degrees: T::of(45.0), combine_with_npairs: None }
    }
}

/// Checks the two-rows-per-class layout and returns it.
fn check_layout(labels: &[usize], layout: &[(usize, usize)]) -> Result<()> {
    let n = labels.len();
    if layout.len() < 2 {
        return Err(DmlError::domain("n-pair batches need at least 2 classes"));
    }
    if layout.len() * 2 != n {
        return Err(DmlError::domain(format!(
            "n-pair batch must hold exactly 2 rows per class: {} pairs for {n} rows",
            layout.len()
        )));
    }
    let mut seen = vec![false; n];
    let mut classes = Vec::with_capacity(layout.len());
    for &(a, p) in layout {
        if a >= n || p >= n || a == p || seen[a] || seen[p] {
            return Err(DmlError::domain(format!("invalid n-pair ({a},{p})")));
        }
        seen[a] = true;
        seen[p] = true;
        if labels[a] != labels[p] {
            return Err(DmlError::domain(format!("pair ({a},{p}) has mismatched labels")));
        }
        classes.push(labels[a]);
    }
    classes.sort_unstable();
    if classes.windows(2).any(|w| w[0] == w[1]) {
        return Err(DmlError::domain("n-pair classes must be distinct"));
    }
    Ok(())
}

fn similarities<T: Scalar>(y: ArrayView2<'_, T>) -> Array2<T> {
    y.dot(&y.t())
}

/// N-pair term for one direction; accumulates `dL/dS` into `grad_s` scaled by `weight`.
fn npairs_term<T: Scalar>(s: &Array2<T>, layout: &[(usize, usize)], weight: T, grad_s: &mut Array2<T>) -> T {
    let inv = weight / T::of(layout.len() as f64);
    let mut total = T::zero();
    for (i, &(a, p)) in layout.iter().enumerate() {
        let z: Vec<(usize, T)> = layout
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &(_, pj))| (pj, s[[a, pj]] - s[[a, p]]))
            .collect();
        let lse = log_sum_exp(std::iter::once(T::zero()).chain(z.iter().map(|&(_, v)| v)));
        total += lse;
        for &(pj, v) in &z {
            let w = (v - lse).exp() * inv;
            grad_s[[a, pj]] += w;
            grad_s[[a, p]] -= w;
        }
    }
    total * inv
}

fn angular_term<T: Scalar>(s: &Array2<T>, layout: &[(usize, usize)], tan2: T, weight: T, grad_s: &mut Array2<T>) -> T {
    let inv = weight / T::of(layout.len() as f64);
    let four_t2 = T::of(4.0) * tan2;
    let ap_coef = T::of(2.0) * (T::one() + tan2);
    let mut total = T::zero();
    for (i, &(a, p)) in layout.iter().enumerate() {
        let f: Vec<(usize, T)> = layout
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &(_, n))| (n, four_t2 * (s[[a, n]] + s[[p, n]]) - ap_coef * s[[a, p]]))
            .collect();
        let lse = log_sum_exp(std::iter::once(T::zero()).chain(f.iter().map(|&(_, v)| v)));
        total += lse;
        for &(n, v) in &f {
            let w = (v - lse).exp() * inv;
            grad_s[[a, n]] += w * four_t2;
            grad_s[[p, n]] += w * four_t2;
            grad_s[[a, p]] -= w * ap_coef;
        }
    }
    total * inv
}

/// Pulls `dL/dS` (S = Y Y^T) back onto Y through the negative-dot metric.
fn similarity_backward<T: Scalar>(y: ArrayView2<'_, T>, grad_s: Array2<T>) -> Array2<T> {
    let grad_d = grad_s.mapv(|g| -g);
    pairwise_backward(y, Metric::NegativeDot, grad_d.view())
}

/// N-pair loss over a two-rows-per-class batch: for each pair `i`,
/// `log(1 + sum_{j != i} exp(s(a_i, p_j) - s(a_i, p_i)))`, averaged, plus
/// `l2_reg` times the mean squared raw embedding norm. `s` is the dot product.
pub fn npairs_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    layout: &[(usize, usize)],
    cfg: &NpairsConfig<T>,
) -> Result<DifferentiableResult<T>> {
    check_layout(batch.labels(), layout)?;
    if cfg.l2_reg < T::zero() {
        return Err(DmlError::domain("l2_reg must be non-negative"));
    }
    let prep = Prepared::new(batch, cfg.normalize)?;
    let s = similarities(prep.y.view());
    let mut grad_s = Array2::zeros(s.dim());
    let mut value = if cfg.reversed {
        let half = T::of(0.5);
        let swapped: Vec<(usize, usize)> = layout.iter().map(|&(a, p)| (p, a)).collect();
        npairs_term(&s, layout, half, &mut grad_s) + npairs_term(&s, &swapped, half, &mut grad_s)
    } else {
        npairs_term(&s, layout, T::one(), &mut grad_s)
    };
    let mut grad = prep.backward(similarity_backward(prep.y.view(), grad_s));
    if cfg.l2_reg > T::zero() {
        let x = batch.vectors();
        let n = T::of(batch.len() as f64);
        value += cfg.l2_reg * x.iter().map(|&v| v * v).sum::<T>() / n;
        let c = T::of(2.0) * cfg.l2_reg / n;
        grad.zip_mut_with(x, |g, &v| *g += c * v);
    }
    let mut out = DifferentiableResult::zeros(batch.len(), batch.dim());
    out.value = value;
    out.grad_embeddings = grad;
    Ok(out)
}

/// Angular loss on L2-normalized embeddings with
/// `f = 4 tan^2(alpha) (x_a + x_p)^T x_n - 2 (1 + tan^2(alpha)) x_a^T x_p`.
pub fn angular_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    layout: &[(usize, usize)],
    params: &AngularParams<T>,
) -> Result<DifferentiableResult<T>> {
    let alpha = params.alpha_degrees;
    if !(alpha > T::zero() && alpha < T::of(90.0)) {
        return Err(DmlError::domain(format!("angle {alpha} outside (0, 90) degrees")));
    }
    check_layout(batch.labels(), layout)?;
    let tan2 = alpha.to_radians().tan().powi(2);
    let prep = Prepared::new(batch, true)?;
    let s = similarities(prep.y.view());
    let mut grad_s = Array2::zeros(s.dim());
    let value = match params.combine_with_npairs {
        None => angular_term(&s, layout, tan2, T::one(), &mut grad_s),
        Some(lambda) => {
            npairs_term(&s, layout, T::one(), &mut grad_s) + angular_term(&s, layout, tan2, lambda, &mut grad_s)
        }
    };
    let mut out = DifferentiableResult::zeros(batch.len(), batch.dim());
    out.value = value;
    out.grad_embeddings = prep.backward(similarity_backward(prep.y.view(), grad_s));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn plain() -> NpairsConfig<f64> {
        NpairsConfig { l2_reg: 0.0, normalize: false, reversed: false }
    }

    #[test]
    fn equal_similarities_give_log_two() {
        // every similarity is zero
        let b = EmbeddingBatch::new(
            array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let r = npairs_loss(&b, &[(0, 1), (2, 3)], &plain()).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn far_negatives_vanish() {
        let b = EmbeddingBatch::new(array![[50.0, 0.0], [50.0, 0.0], [-50.0, 0.0], [-50.0, 0.0]], vec![0, 0, 1, 1])
            .unwrap();
        let r = npairs_loss(&b, &[(0, 1), (2, 3)], &plain()).unwrap();
        assert!(r.value < 1e-100);
    }

    #[test]
    fn reversed_equals_forward_on_symmetric_batch() {
        let b =
            EmbeddingBatch::new(array![[0.3, 0.1], [0.3, 0.1], [-0.2, 0.5], [-0.2, 0.5]], vec![0, 0, 1, 1]).unwrap();
        let f = npairs_loss(&b, &[(0, 1), (2, 3)], &plain()).unwrap();
        let r = npairs_loss(&b, &[(0, 1), (2, 3)], &NpairsConfig { reversed: true, ..plain() }).unwrap();
        assert!((f.value - r.value).abs() < 1e-14);
    }

    #[test]
    fn wrong_shape_rejected() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0], [2.0]], vec![0, 0, 1]).unwrap();
        assert!(npairs_loss(&b, &[(0, 1)], &plain()).is_err());
        let b = EmbeddingBatch::new(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 0, 0, 0]).unwrap();
        assert!(npairs_loss(&b, &[(0, 1), (2, 3)], &plain()).is_err());
    }

    #[test]
    fn angular_hand_value() {
        // x_a = x_p = e1, negative rows are e2; with two classes the other
        // pair's positive (e2) is the single negative for anchor 0.
        let b = EmbeddingBatch::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], vec![0, 0, 1, 1]).unwrap();
        let r = angular_loss(&b, &[(0, 1), (2, 3)], &AngularParams { alpha_degrees: 45.0, combine_with_npairs: None })
            .unwrap();
        let per_anchor = (1.0 + (-4.0f64).exp()).ln();
        assert!((r.value - per_anchor).abs() < 1e-12);
        assert!((per_anchor - 0.018149).abs() < 1e-6);
    }

    #[test]
    fn angular_small_alpha_limit() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], vec![0, 0, 1, 1]).unwrap();
        let r = angular_loss(&b, &[(0, 1), (2, 3)], &AngularParams { alpha_degrees: 1e-6, combine_with_npairs: None })
            .unwrap();
        assert!((r.value - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-9);
    }

    #[test]
    fn angular_rejects_bad_angle() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], vec![0, 0, 1, 1]).unwrap();
        for a in [0.0, 90.0, -5.0, 120.0] {
            assert!(angular_loss(
                &b,
                &[(0, 1), (2, 3)],
                &AngularParams { alpha_degrees: a, combine_with_npairs: None }
            )
            .is_err());
        }
    }

    #[test]
    fn angular_is_scale_invariant() {
        let b: EmbeddingBatch<f64> =
            EmbeddingBatch::new(array![[0.3, 0.1], [0.2, 0.4], [-0.2, 0.5], [-0.7, 0.1]], vec![0, 0, 1, 1]).unwrap();
        let b3 = b.with_vectors(b.vectors() * 3.7).unwrap();
        let p = AngularParams::default();
        let v1 = angular_loss(&b, &[(0, 1), (2, 3)], &p).unwrap().value;
        let v2 = angular_loss(&b3, &[(0, 1), (2, 3)], &p).unwrap().value;
        assert!((v1 - v2).abs() < 1e-12_f64);
    }
}
