//! Pairwise distances and their reverse-mode pullbacks.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::error::{DmlError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SquaredEuclidean,
    Euclidean,
    /// `1 - cos(a, b)`.
    CosineDistance,
    /// `-a . b`, so that smaller still means closer.
    NegativeDot,
}

impl Metric {
    /// Distance between two vectors.
    pub fn eval<T: Scalar>(self, a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
        match self {
            Metric::SquaredEuclidean => sq_dist(a, b),
            Metric::Euclidean => sq_dist(a, b).sqrt(),
            Metric::CosineDistance => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                T::one() - a.dot(&b) / (na * nb)
            }
            Metric::NegativeDot => -a.dot(&b),
        }
    }
}

pub(crate) fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// N x N matrix of distances under one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    pub values: Array2<T>,
    pub metric: Metric,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[[i, j]]
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_cosine<T: Scalar>(x: ArrayView2<'_, T>) -> Result<()> {
    for (i, r) in x.rows().into_iter().enumerate() {
        if r.dot(&r) == T::zero() {
            return Err(DmlError::ZeroNorm { row: i });
        }
    }
    Ok(())
}

pub fn pairwise_distances<T: Scalar>(batch: &EmbeddingBatch<T>, metric: Metric) -> Result<DistanceMatrix<T>> {
    let values = pairwise(batch.view(), metric)?;
    Ok(DistanceMatrix { values, metric })
}

/// Symmetric pairwise distances between the rows of `x`.
pub fn pairwise<T: Scalar>(x: ArrayView2<'_, T>, metric: Metric) -> Result<Array2<T>> {
    if metric == Metric::CosineDistance {
        check_cosine(x)?;
    }
    let n = x.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let d = if i == j && metric != Metric::NegativeDot { T::zero() } else { metric.eval(x.row(i), x.row(j)) };
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    Ok(out)
}

/// Distances between every row of `a` and every row of `b`.
pub fn cross<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, metric: Metric) -> Result<Array2<T>> {
    if a.ncols() != b.ncols() {
        return Err(DmlError::shape(format!("dims {} vs {}", a.ncols(), b.ncols())));
    }
    if metric == Metric::CosineDistance {
        check_cosine(a)?;
        check_cosine(b)?;
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            out[[i, j]] = metric.eval(ra, rb);
        }
    }
    Ok(out)
}

/// Pullback of [`cross`]: given `dL/dD[i][j]`, returns `(dL/da, dL/db)`.
///
/// Euclidean distance has no derivative at zero; the subgradient 0 is used.
pub fn cross_backward<T: Scalar>(
    a: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
    metric: Metric,
    grad_d: ArrayView2<'_, T>,
) -> (Array2<T>, Array2<T>) {
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    let two = T::of(2.0);
    let dim = a.ncols();
    for i in 0..a.nrows() {
        let ra = a.row(i);
        for j in 0..b.nrows() {
            let g = grad_d[[i, j]];
            if g == T::zero() {
                continue;
            }
            let rb = b.row(j);
            match metric {
                Metric::SquaredEuclidean => {
                    for k in 0..dim {
                        let v = two * (ra[k] - rb[k]) * g;
                        ga[[i, k]] += v;
                        gb[[j, k]] -= v;
                    }
                }
                Metric::Euclidean => {
                    let d = sq_dist(ra, rb).sqrt();
                    if d > T::zero() {
                        for k in 0..dim {
                            let v = (ra[k] - rb[k]) / d * g;
                            ga[[i, k]] += v;
                            gb[[j, k]] -= v;
                        }
                    }
                }
                Metric::CosineDistance => {
                    let na = ra.dot(&ra).sqrt();
                    let nb = rb.dot(&rb).sqrt();
                    let c = ra.dot(&rb) / (na * nb);
                    for k in 0..dim {
                        ga[[i, k]] -= g * (rb[k] / (na * nb) - c * ra[k] / (na * na));
                        gb[[j, k]] -= g * (ra[k] / (na * nb) - c * rb[k] / (nb * nb));
                    }
                }
                Metric::NegativeDot => {
                    for k in 0..dim {
                        ga[[i, k]] -= g * rb[k];
                        gb[[j, k]] -= g * ra[k];
                    }
                }
            }
        }
    }
    (ga, gb)
}

/// Pullback of [`pairwise`] treating `D[i][j]` and `D[j][i]` as separate uses.
pub fn pairwise_backward<T: Scalar>(x: ArrayView2<'_, T>, metric: Metric, grad_d: ArrayView2<'_, T>) -> Array2<T> {
    let (ga, gb) = cross_backward(x, x, metric, grad_d);
    ga + gb
}
