use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::batch::{normalize_rows, EmbeddingBatch};
use crate::diff::DifferentiableResult;
use crate::distance::{cross, cross_backward, Metric};
use crate::error::{DmlError, Result};
use crate::losses::{hinge, Prepared};
use crate::scalar::{log_sum_exp, softmax, Scalar};

/// One learnable embedding per training class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank<T> {
    /// C x D, one row per class.
    pub proxies: Array2<T>,
    /// `assignment[class] = row`, fixed at construction.
    pub assignment: Vec<usize>,
    pub trainable: bool,
    /// Multiplier applied to normalized embeddings and proxies before
    /// distances are taken.
    pub scale: T,
    pub normalize: bool,
}

impl<T: Scalar> ProxyBank<T> {
    /// Proxies drawn uniformly from the unit sphere, class `c` on row `c`.
    pub fn random<R: Rng + ?Sized>(n_classes: usize, dim: usize, rng: &mut R) -> Self {
        let raw = Array2::from_shape_simple_fn((n_classes, dim), || T::of(rng.sample::<f64, _>(StandardNormal)));
        let proxies = normalize_rows(raw.view()).map(|(p, _)| p).unwrap_or(raw);
        Self { proxies, assignment: (0..n_classes).collect(), trainable: true, scale: T::one(), normalize: true }
    }

    pub fn from_proxies(proxies: Array2<T>) -> Self {
        let c = proxies.nrows();
        Self { proxies, assignment: (0..c).collect(), trainable: true, scale: T::one(), normalize: true }
    }

    pub fn n_proxies(&self) -> usize {
        self.proxies.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let mut rows = self.assignment.clone();
        rows.sort_unstable();
        if rows.windows(2).any(|w| w[0] == w[1]) {
            return Err(DmlError::domain("proxy assignment must be injective"));
        }
        if rows.last().is_some_and(|&r| r >= self.n_proxies()) {
            return Err(DmlError::shape("proxy assignment points past the bank"));
        }
        if !(self.scale > T::zero()) {
            return Err(DmlError::domain("proxy scale must be positive"));
        }
        Ok(())
    }

    fn rows_for(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&c| {
                self.assignment
                    .get(c)
                    .copied()
                    .ok_or_else(|| DmlError::domain(format!("class {c} has no assigned proxy")))
            })
            .collect()
    }

    /// Projects every row back onto the unit sphere (no-op unless normalized).
    /// Rows already unit-norm to rounding are left untouched so that the
    /// projection is idempotent.
    pub fn reproject(&mut self) {
        if !self.normalize {
            return;
        }
        let tol = T::epsilon() * T::of(4.0);
        for mut row in self.proxies.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > T::zero() && norm.is_finite() && (norm - T::one()).abs() > tol {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }
}

struct ProxyGeometry<T> {
    x: Prepared<T>,
    p: Prepared<T>,
    rows: Vec<usize>,
    scale: T,
}

impl<T: Scalar> ProxyGeometry<T> {
    fn new(batch: &EmbeddingBatch<T>, bank: &ProxyBank<T>, normalize: bool, scale: T) -> Result<Self> {
        bank.validate()?;
        if bank.proxies.ncols() != batch.dim() {
            return Err(DmlError::shape(format!(
                "proxy dim {} vs embedding dim {}",
                bank.proxies.ncols(),
                batch.dim()
            )));
        }
        let rows = bank.rows_for(batch.labels())?;
        Ok(Self {
            x: Prepared::new(batch, normalize)?,
            p: Prepared::from_view(bank.proxies.view(), normalize)?,
            rows,
            scale,
        })
    }

    fn scaled(&self) -> (Array2<T>, Array2<T>) {
        (&self.x.y * self.scale, &self.p.y * self.scale)
    }

    /// Pulls `dL/dD` on the scaled geometry back to raw embeddings and proxies.
    fn backward(
        &self,
        xs: ArrayView2<'_, T>,
        ps: ArrayView2<'_, T>,
        metric: Metric,
        grad_d: Array2<T>,
        bank: &ProxyBank<T>,
        out: &mut DifferentiableResult<T>,
    ) {
        let (gx, gp) = cross_backward(xs, ps, metric, grad_d.view());
        out.grad_embeddings = self.x.backward(gx * self.scale);
        if bank.trainable {
            out.grad_params.insert("proxies".into(), self.p.backward(gp * self.scale).into_dyn());
        }
    }
}

fn need_negatives<T: Scalar>(bank: &ProxyBank<T>) -> Result<()> {
    if bank.n_proxies() < 2 {
        return Err(DmlError::domain("proxy bank needs at least two classes"));
    }
    Ok(())
}

/// Proxy-NCA: `d(x, p(a)) + log sum_{c != a} exp(-d(x, p(c)))` averaged over
/// anchors, `d` squared euclidean between scaled (normalized) vectors.
///
/// The negative-only denominator leaves the loss unbounded below;
/// `include_positive` adds the positive proxy to the denominator.
pub fn proxy_nca_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    bank: &ProxyBank<T>,
    include_positive: bool,
) -> Result<DifferentiableResult<T>> {
    need_negatives(bank)?;
    let geo = ProxyGeometry::new(batch, bank, bank.normalize, bank.scale)?;
    let (xs, ps) = geo.scaled();
    let d = cross(xs.view(), ps.view(), Metric::SquaredEuclidean)?;
    let n = batch.len();
    let inv = T::one() / T::of(n as f64);
    let mut grad_d = Array2::zeros(d.dim());
    let mut total = T::zero();
    for (a, &own) in geo.rows.iter().enumerate() {
        let cols: Vec<usize> = (0..bank.n_proxies()).filter(|&c| include_positive || c != own).collect();
        let logits: Vec<T> = cols.iter().map(|&c| -d[[a, c]]).collect();
        total += d[[a, own]] + log_sum_exp(logits.iter().copied());
        grad_d[[a, own]] += inv;
        for (&c, w) in cols.iter().zip(softmax(&logits)) {
            grad_d[[a, c]] -= w * inv;
        }
    }
    let mut out = DifferentiableResult::zeros(n, batch.dim());
    out.value = total * inv;
    geo.backward(xs.view(), ps.view(), Metric::SquaredEuclidean, grad_d, bank, &mut out);
    Ok(out)
}

/// Triplet hinge with proxies standing in for positives and negatives:
/// mean over anchors and negative proxies of `[d(x, p(a)) - d(x, p(c)) + M]_+`.
pub fn proxy_triplet_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    bank: &ProxyBank<T>,
    margin: T,
) -> Result<DifferentiableResult<T>> {
    need_negatives(bank)?;
    if !(margin > T::zero()) {
        return Err(DmlError::domain("margin must be positive"));
    }
    let geo = ProxyGeometry::new(batch, bank, bank.normalize, bank.scale)?;
    let (xs, ps) = geo.scaled();
    let d = cross(xs.view(), ps.view(), Metric::SquaredEuclidean)?;
    let n = batch.len();
    let inv = T::one() / T::of((n * (bank.n_proxies() - 1)) as f64);
    let mut out = DifferentiableResult::zeros(n, batch.dim());
    let mut grad_d = Array2::zeros(d.dim());
    let mut total = T::zero();
    for (a, &own) in geo.rows.iter().enumerate() {
        for c in (0..bank.n_proxies()).filter(|&c| c != own) {
            let arg = d[[a, own]] - d[[a, c]] + margin;
            out.note_kink(arg);
            if arg > T::zero() {
                total += hinge(arg);
                grad_d[[a, own]] += inv;
                grad_d[[a, c]] -= inv;
            }
        }
    }
    out.value = total * inv;
    geo.backward(xs.view(), ps.view(), Metric::SquaredEuclidean, grad_d, bank, &mut out);
    Ok(out)
}

/// Softmax cross-entropy over cosine similarities to all proxies divided by
/// `temperature`. Embeddings and proxies are always normalized.
pub fn proxy_softmax_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    bank: &ProxyBank<T>,
    temperature: T,
) -> Result<DifferentiableResult<T>> {
    if !(temperature > T::zero()) {
        return Err(DmlError::domain("temperature must be positive"));
    }
    let geo = ProxyGeometry::new(batch, bank, true, T::one())?;
    let (xs, ps) = (&geo.x.y, &geo.p.y);
    // D = -x.p, logits = -D / tau
    let d = cross(xs.view(), ps.view(), Metric::NegativeDot)?;
    let n = batch.len();
    let inv = T::one() / T::of(n as f64);
    let mut grad_d = Array2::zeros(d.dim());
    let mut total = T::zero();
    for (a, &own) in geo.rows.iter().enumerate() {
        let logits: Vec<T> = d.row(a).iter().map(|&v| -v / temperature).collect();
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - logits[own];
        for (c, &z) in logits.iter().enumerate() {
            let g = (z - lse).exp() - if c == own { T::one() } else { T::zero() };
            grad_d[[a, c]] = -g * inv / temperature;
        }
    }
    let mut out = DifferentiableResult::zeros(n, batch.dim());
    out.value = total * inv;
    geo.backward(xs.view(), ps.view(), Metric::NegativeDot, grad_d, bank, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bank(p: Array2<f64>) -> ProxyBank<f64> {
        ProxyBank::from_proxies(p)
    }

    #[test]
    fn nca_on_own_proxy_with_coincident_negative() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        let r = proxy_nca_loss(&b, &bank(array![[1.0, 0.0], [1.0, 0.0]]), false).unwrap();
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn nca_two_negatives_at_equal_distance() {
        // d_p = 0, both negatives orthogonal -> d_n = 2
        let b = EmbeddingBatch::new(array![[1.0, 0.0, 0.0]], vec![0]).unwrap();
        let p = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let r = proxy_nca_loss(&b, &bank(p), false).unwrap();
        assert!((r.value - (2f64.ln() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn nca_rejects_unassigned_and_single_class() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0]], vec![3]).unwrap();
        assert!(proxy_nca_loss(&b, &bank(array![[1.0, 0.0], [0.0, 1.0]]), false).is_err());
        let b = EmbeddingBatch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        assert!(proxy_nca_loss(&b, &bank(array![[1.0, 0.0]]), false).is_err());
    }

    #[test]
    fn proxy_triplet_hand_values() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        // anchor on its proxy, negative at squared distance 2 > M
        let r = proxy_triplet_loss(&b, &bank(array![[1.0, 0.0], [0.0, 1.0]]), 0.5).unwrap();
        assert_eq!(r.value, 0.0);
        // unnormalized geometry: d_p = 0.5, d_n = 0.4
        let mut raw = bank(array![[1.0, 0.0], [0.0, 0.0]]);
        raw.normalize = false;
        let s = 0.5f64.sqrt();
        let b = EmbeddingBatch::new(array![[1.0 - s, 0.0]], vec![0]).unwrap();
        let n = 0.4f64.sqrt();
        raw.proxies = array![[1.0, 0.0], [1.0 - s, n]];
        let r = proxy_triplet_loss(&b, &raw, 0.2).unwrap();
        assert!((r.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn softmax_hand_value() {
        let b = EmbeddingBatch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        let r = proxy_softmax_loss(&b, &bank(array![[1.0, 0.0], [0.0, 1.0]]), 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r.value + (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((r.value - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn softmax_uniform_is_log_c() {
        let b = EmbeddingBatch::new(array![[0.0, 0.0, 1.0]], vec![1]).unwrap();
        let p = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let r = proxy_softmax_loss(&b, &bank(p), 0.1).unwrap();
        assert!((r.value - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_single_class_is_zero() {
        let b = EmbeddingBatch::new(array![[0.3, 0.4]], vec![0]).unwrap();
        let r = proxy_softmax_loss(&b, &bank(array![[1.0, 0.0]]), 0.1).unwrap();
        assert!(r.value.abs() < 1e-15);
    }

    #[test]
    fn frozen_bank_has_no_parameter_gradient() {
        let b = EmbeddingBatch::new(array![[0.3, 0.4]], vec![0]).unwrap();
        let mut bk = bank(array![[1.0, 0.0], [0.0, 1.0]]);
        bk.trainable = false;
        assert!(proxy_softmax_loss(&b, &bk, 0.1).unwrap().grad_params.is_empty());
        bk.trainable = true;
        assert!(proxy_softmax_loss(&b, &bk, 0.1).unwrap().grad_params.contains_key("proxies"));
    }
}
