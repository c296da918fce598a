use ndarray::{Array1, Array2};

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::error::{DmlError, Result};
use crate::plan::Episode;
use crate::scalar::{softmax, Scalar};

/// Prototypical loss: each query is classified by a softmax over negative
/// squared distances to the class prototypes (support means) of its episode.
/// Per-episode means over queries are averaged across episodes; gradients
/// reach the support rows through the prototypes.
pub fn prototypical_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    episodes: &[Episode],
) -> Result<DifferentiableResult<T>> {
    if episodes.is_empty() {
        return Err(DmlError::domain("prototypical loss needs at least one episode"));
    }
    let x = batch.vectors();
    let labels = batch.labels();
    let (n, dim) = x.dim();
    let mut out = DifferentiableResult::zeros(n, dim);
    let mut grad = Array2::<T>::zeros((n, dim));
    let inv_e = T::one() / T::of(episodes.len() as f64);
    let two = T::of(2.0);
    let mut total = T::zero();

    for (e, episode) in episodes.iter().enumerate() {
        let mut protos = Vec::with_capacity(episode.classes.len());
        let mut n_query = 0usize;
        for c in &episode.classes {
            if c.support.is_empty() {
                return Err(DmlError::domain(format!("class {} in episode {e} has no support samples", c.label)));
            }
            for &i in c.support.iter().chain(&c.query) {
                if i >= n {
                    return Err(DmlError::shape(format!("row {i} out of range")));
                }
                if labels[i] != c.label {
                    return Err(DmlError::domain(format!("row {i} is not of class {}", c.label)));
                }
            }
            let mut mu = Array1::<T>::zeros(dim);
            for &s in &c.support {
                mu += &x.row(s);
            }
            mu /= T::of(c.support.len() as f64);
            protos.push(mu);
            n_query += c.query.len();
        }
        if n_query == 0 {
            return Err(DmlError::domain(format!("episode {e} has no queries")));
        }
        let scale = inv_e / T::of(n_query as f64);
        let mut grad_proto: Vec<Array1<T>> = protos.iter().map(|p| Array1::zeros(p.len())).collect();

        for (k, c) in episode.classes.iter().enumerate() {
            for &q in &c.query {
                let xq = x.row(q);
                let logits: Vec<T> = protos
                    .iter()
                    .map(|mu| -xq.iter().zip(mu.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
                    .collect();
                let p = softmax(&logits);
                total += -p[k].ln() * scale;
                // dL/dd_j = [j == k] - p_j
                for (j, mu) in protos.iter().enumerate() {
                    let g = (if j == k { T::one() } else { T::zero() } - p[j]) * scale;
                    if g == T::zero() {
                        continue;
                    }
                    for t in 0..dim {
                        let v = two * (xq[t] - mu[t]) * g;
                        grad[[q, t]] += v;
                        grad_proto[j][t] -= v;
                    }
                }
            }
        }
        for (c, gp) in episode.classes.iter().zip(&grad_proto) {
            let share = T::one() / T::of(c.support.len() as f64);
            for &s in &c.support {
                for t in 0..dim {
                    grad[[s, t]] += gp[t] * share;
                }
            }
        }
    }
    out.value = total;
    out.grad_embeddings = grad;
    Ok(out)
}
