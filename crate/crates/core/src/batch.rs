//! Embedding batches and row normalization.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DmlError, Result};
use crate::scalar::Scalar;

/// Tolerance on row norms for batches flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// N embedding vectors of dimension D with one class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct EmbeddingBatch<T> {
    vectors: Array2<T>,
    labels: Vec<usize>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(vectors: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        let (n, d) = vectors.dim();
        if n == 0 || d == 0 {
            return Err(DmlError::shape(format!("batch must be non-empty, got {n}x{d}")));
        }
        if labels.len() != n {
            return Err(DmlError::shape(format!("{} labels for {n} vectors", labels.len())));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(DmlError::domain("embedding contains a non-finite value"));
        }
        Ok(Self { vectors, labels, normalized: false })
    }

    /// Builds a batch from row slices; convenient in tests and examples.
    pub fn from_rows(rows: &[Vec<T>], labels: Vec<usize>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(DmlError::shape("ragged rows"));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let vectors = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| DmlError::shape(e.to_string()))?;
        Self::new(vectors, labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Same labels, new coordinates. The result is not flagged normalized.
    pub fn with_vectors(&self, vectors: Array2<T>) -> Result<Self> {
        Self::new(vectors, self.labels.clone())
    }

    pub fn into_parts(self) -> (Array2<T>, Vec<usize>) {
        (self.vectors, self.labels)
    }

    /// Number of distinct labels.
    pub fn n_classes(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }

    /// Row subset in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(DmlError::shape(format!("row {bad} out of range")));
        }
        let vectors = self.vectors.select(Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Ok(Self { vectors, labels, normalized: self.normalized })
    }
}

/// Divides every row by its L2 norm and flags the batch normalized.
pub fn l2_normalize<T: Scalar>(batch: &EmbeddingBatch<T>) -> Result<EmbeddingBatch<T>> {
    if batch.normalized {
        return Ok(batch.clone());
    }
    let (vectors, _) = normalize_rows(batch.view())?;
    Ok(EmbeddingBatch { vectors, labels: batch.labels.clone(), normalized: true })
}

/// Row-wise L2 normalization returning the unit rows and the original norms.
pub fn normalize_rows<T: Scalar>(x: ArrayView2<'_, T>) -> Result<(Array2<T>, Array1<T>)> {
    let norms: Array1<T> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(row) = norms.iter().position(|&n| n == T::zero() || !n.is_finite()) {
        return Err(DmlError::ZeroNorm { row });
    }
    let mut y = x.to_owned();
    for (mut r, &n) in y.rows_mut().into_iter().zip(norms.iter()) {
        r.mapv_inplace(|v| v / n);
    }
    Ok((y, norms))
}

/// Pulls a gradient on unit rows `y = x/|x|` back onto `x`:
/// `dx = (dy - y (y . dy)) / |x|`.
pub fn normalize_rows_backward<T: Scalar>(
    y: ArrayView2<'_, T>,
    norms: &Array1<T>,
    grad_y: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut gx = grad_y.to_owned();
    for ((mut g, yr), &n) in gx.rows_mut().into_iter().zip(y.rows()).zip(norms.iter()) {
        let proj = yr.dot(&g);
        g.zip_mut_with(&yr, |gv, &yv| *gv = (*gv - yv * proj) / n);
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_three_four() {
        let b = EmbeddingBatch::new(array![[3.0_f64, 4.0]], vec![0]).unwrap();
        let n = l2_normalize(&b).unwrap();
        assert!((n.vectors()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((n.vectors()[[0, 1]] - 0.8).abs() < 1e-15);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_is_idempotent() {
        let b = EmbeddingBatch::new(array![[1.0_f64, 0.0], [0.3, -2.0]], vec![0, 1]).unwrap();
        let once = l2_normalize(&b).unwrap();
        let unflagged = EmbeddingBatch::new(once.vectors().clone(), vec![0, 1]).unwrap();
        let twice = l2_normalize(&unflagged).unwrap();
        for (a, b) in once.vectors().iter().zip(twice.vectors().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_row_is_rejected_with_index() {
        let b = EmbeddingBatch::new(array![[1.0_f64, 0.0], [0.0, 0.0]], vec![0, 1]).unwrap();
        assert_eq!(l2_normalize(&b), Err(DmlError::ZeroNorm { row: 1 }));
    }

    #[test]
    fn constructor_checks_shapes() {
        assert!(EmbeddingBatch::new(Array2::<f64>::zeros((2, 3)), vec![0]).is_err());
        assert!(EmbeddingBatch::new(Array2::<f64>::zeros((0, 3)), vec![]).is_err());
        assert!(EmbeddingBatch::new(array![[f64::NAN]], vec![0]).is_err());
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let x = array![[0.3_f64, -1.2, 0.7]];
        let g = array![[0.5_f64, 0.1, -0.4]];
        let (y, n) = normalize_rows(x.view()).unwrap();
        let gx = normalize_rows_backward(y.view(), &n, g.view());
        let f = |x: &Array2<f64>| {
            let (y, _) = normalize_rows(x.view()).unwrap();
            (&y * &g).sum()
        };
        for j in 0..3 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[[0, j]] += h;
            let mut xm = x.clone();
            xm[[0, j]] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - gx[[0, j]]).abs() < 1e-8);
        }
    }
}
