use ndarray::Array2;

use crate::batch::EmbeddingBatch;
use crate::diff::DifferentiableResult;
use crate::distance::{pairwise_backward, Metric};
use crate::error::{DmlError, Result};
pub use crate::eval::facility::InferenceMode as Inference;
use crate::eval::facility::{euclidean_matrix, inference_from, nearest, oracle_from, EXHAUSTIVE_MAX_N};
use crate::losses::Prepared;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructClustParams<T> {
    pub gamma: T,
    pub inference: Inference,
    pub normalize: bool,
}

impl<T: Scalar> Default for StructClustParams<T> {
    fn default() -> Self {
        Self { gamma: T::one(), inference: Inference::Greedy, normalize: true }
    }
}

/// Structured clustering loss
/// `[max_{|S|=k} {F(X,S) + gamma (1 - NMI(g(S), Y))} - F~(X)]_+`
/// with the maximizer found by `params.inference`.
pub fn struct_clust_loss<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    params: &StructClustParams<T>,
) -> Result<DifferentiableResult<T>> {
    if !(params.gamma > T::zero()) {
        return Err(DmlError::domain("gamma must be positive"));
    }
    let k = batch.n_classes();
    let n = batch.len();
    if k < 2 {
        return Err(DmlError::domain("structured clustering needs at least two classes"));
    }
    if params.inference == Inference::Exhaustive && n > EXHAUSTIVE_MAX_N {
        return Err(DmlError::Guard(format!("exhaustive inference limited to {EXHAUSTIVE_MAX_N} points, got {n}")));
    }
    let labels = batch.labels();
    let prep = Prepared::new(batch, params.normalize)?;
    let d = euclidean_matrix(prep.y.view());
    let found = inference_from(&d, labels, params.gamma, k, params.inference)?;
    let oracle = oracle_from(&d, labels);
    let arg = found.objective - oracle.score;

    let mut out = DifferentiableResult::zeros(n, batch.dim());
    out.note_kink(arg);
    out.note_kink(found.decision_gap);
    out.note_kink(oracle.gap);
    let near = nearest(&d, found.set.indices());
    for i in 0..n {
        let own = near[i].0;
        for &j in found.set.indices() {
            if j != own {
                out.note_kink(d[[i, j]] - near[i].1);
            }
        }
    }
    if arg > T::zero() {
        out.value = arg;
        let mut grad_d = Array2::zeros((n, n));
        for i in 0..n {
            // F = -sum_i d(i, nearest facility); F~ enters with a minus sign
            grad_d[[i, near[i].0]] -= T::one();
            grad_d[[i, oracle.medoid_of[i]]] += T::one();
        }
        for i in 0..n {
            grad_d[[i, i]] = T::zero();
        }
        out.grad_embeddings = prep.backward(pairwise_backward(prep.y.view(), Metric::Euclidean, grad_d.view()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_separated_singletons_give_zero() {
        let b = EmbeddingBatch::new(array![[0.0, 0.0], [10.0, 0.0]], vec![0, 1]).unwrap();
        let p = StructClustParams { gamma: 0.1, inference: Inference::Exhaustive, normalize: false };
        assert_eq!(struct_clust_loss(&b, &p).unwrap().value, 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let b = EmbeddingBatch::new(array![[0.0], [1.0]], vec![0, 0]).unwrap();
        assert!(struct_clust_loss(&b, &StructClustParams::default()).is_err());
    }

    #[test]
    fn exhaustive_guard() {
        let x = Array2::from_shape_fn((13, 2), |(i, j)| (i * 2 + j) as f64);
        let b = EmbeddingBatch::new(x, (0..13).map(|i| i % 2).collect()).unwrap();
        let p = StructClustParams { gamma: 1.0, inference: Inference::Exhaustive, normalize: false };
        assert!(matches!(struct_clust_loss(&b, &p), Err(DmlError::Guard(_))));
    }

    #[test]
    fn entangled_classes_give_positive_loss() {
        let b = EmbeddingBatch::new(
            array![[0.0, 0.0], [1.0, 0.0], [0.1, 0.0], [1.1, 0.0], [0.05, 0.3], [1.05, 0.3]],
            vec![0, 0, 1, 1, 0, 1],
        )
        .unwrap();
        let p = StructClustParams { gamma: 1.0, inference: Inference::Exhaustive, normalize: false };
        let r = struct_clust_loss(&b, &p).unwrap();
        assert!(r.value > 0.0);
    }
}
