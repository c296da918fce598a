//! Gradient carrier shared by all losses and a central-difference verifier.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayD};
use thiserror::Error;

use crate::batch::EmbeddingBatch;
use crate::error::DmlError;
use crate::scalar::Scalar;

/// Named trainable tensors (proxies, per-class margins, ...).
pub type Params<T> = BTreeMap<String, ArrayD<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiableResult<T> {
    pub value: T,
    /// `dL/dX` with respect to the raw (pre-normalization) embeddings.
    pub grad_embeddings: Array2<T>,
    pub grad_params: Params<T>,
    /// Distance from the evaluation point to the nearest non-smooth point
    /// (hinge kink, argmin/argmax switch), measured in the argument of the
    /// switching quantity. `+inf` for smooth losses.
    pub kink_margin: T,
}

impl<T: Scalar> DifferentiableResult<T> {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            value: T::zero(),
            grad_embeddings: Array2::zeros((n, d)),
            grad_params: Params::new(),
            kink_margin: T::infinity(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.iter().all(|v| v.is_finite())
            && self.grad_params.values().flatten().all(|v| v.is_finite())
    }

    /// Records a candidate kink distance, keeping the smallest.
    pub fn note_kink(&mut self, dist: T) {
        let d = dist.abs();
        if d < self.kink_margin {
            self.kink_margin = d;
        }
    }
}

/// A coordinate perturbed by [`grad_check`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coordinate {
    Embedding { row: usize, col: usize },
    Param { name: String, index: usize },
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Embedding { row, col } => write!(f, "x[{row}][{col}]"),
            Coordinate::Param { name, index } => write!(f, "{name}[{index}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("loss is non-finite at perturbed coordinate {0}")]
    NonFinite(Coordinate),
    #[error("loss failed at perturbed coordinate {coordinate}: {source}")]
    Eval { coordinate: Coordinate, source: DmlError },
    #[error("loss failed at the base point: {0}")]
    Base(DmlError),
    #[error("gradient keys {got:?} do not match parameters {expected:?}")]
    ParamKeys { got: Vec<String>, expected: Vec<String> },
    #[error("step must be positive")]
    BadStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub coordinates_checked: usize,
    pub kink_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - f| / max(1e-6, |a| + |f|)`. The floor keeps finite-difference
/// round-off on vanishing gradients from counting as an error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares analytic gradients against central finite differences, one
/// coordinate at a time, over every embedding entry and every parameter.
pub fn grad_check<T, F>(
    eval: F,
    batch: &EmbeddingBatch<T>,
    params: &Params<T>,
    step: T,
    tolerance: T,
) -> Result<GradCheckReport, GradCheckError>
where
    T: Scalar,
    F: Fn(&EmbeddingBatch<T>, &Params<T>) -> crate::Result<DifferentiableResult<T>>,
{
    if !(step > T::zero()) {
        return Err(GradCheckError::BadStep);
    }
    let base = eval(batch, params).map_err(GradCheckError::Base)?;
    if !base.value.is_finite() {
        return Err(GradCheckError::Base(DmlError::domain("loss is non-finite at the base point")));
    }
    let got: Vec<String> = base.grad_params.keys().cloned().collect();
    let expected: Vec<String> = params.keys().cloned().collect();
    if got != expected {
        return Err(GradCheckError::ParamKeys { got, expected });
    }

    let two_h = (step + step).to_f64_lossy();
    let mut max_rel = 0.0_f64;
    let mut worst = None;
    let mut checked = 0usize;
    let mut record = |analytic: T, plus: T, minus: T, coord: Coordinate| {
        let numeric = (plus - minus).to_f64_lossy() / two_h;
        let rel = relative_error(analytic.to_f64_lossy(), numeric);
        checked += 1;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(coord);
        }
    };
    let value_at = |b: &EmbeddingBatch<T>, p: &Params<T>, coord: &Coordinate| -> Result<T, GradCheckError> {
        let r = eval(b, p).map_err(|source| GradCheckError::Eval { coordinate: coord.clone(), source })?;
        if !r.value.is_finite() {
            return Err(GradCheckError::NonFinite(coord.clone()));
        }
        Ok(r.value)
    };

    let x = batch.vectors();
    for ((row, col), &analytic) in base.grad_embeddings.indexed_iter() {
        let coord = Coordinate::Embedding { row, col };
        let mut xp = x.clone();
        xp[[row, col]] += step;
        let mut xm = x.clone();
        xm[[row, col]] -= step;
        let bp = batch.with_vectors(xp).map_err(GradCheckError::Base)?;
        let bm = batch.with_vectors(xm).map_err(GradCheckError::Base)?;
        let plus = value_at(&bp, params, &coord)?;
        let minus = value_at(&bm, params, &coord)?;
        record(analytic, plus, minus, coord);
    }

    for (name, value) in params {
        let grad = &base.grad_params[name];
        for index in 0..value.len() {
            let coord = Coordinate::Param { name: name.clone(), index };
            let mut pp = params.clone();
            pp.get_mut(name).unwrap().as_slice_mut().expect("standard layout")[index] += step;
            let mut pm = params.clone();
            pm.get_mut(name).unwrap().as_slice_mut().expect("standard layout")[index] -= step;
            let plus = value_at(batch, &pp, &coord)?;
            let minus = value_at(batch, &pm, &coord)?;
            let analytic = grad.as_slice().expect("standard layout")[index];
            record(analytic, plus, minus, coord);
        }
    }

    let tol = tolerance.to_f64_lossy();
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        coordinates_checked: checked,
        kink_margin: base.kink_margin.to_f64_lossy(),
        tolerance: tol,
        passed: max_rel <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sum_of_squares(b: &EmbeddingBatch<f64>, p: &Params<f64>) -> crate::Result<DifferentiableResult<f64>> {
        let x = b.vectors();
        let w = &p["w"];
        let value = x.iter().map(|v| v * v).sum::<f64>() * w[[0]];
        let mut r = DifferentiableResult::zeros(b.len(), b.dim());
        r.value = value;
        r.grad_embeddings = x.mapv(|v| 2.0 * v * w[[0]]);
        r.grad_params.insert("w".into(), ndarray::arr1(&[x.iter().map(|v| v * v).sum::<f64>()]).into_dyn());
        Ok(r)
    }

    fn params() -> Params<f64> {
        let mut p = Params::new();
        p.insert("w".into(), ndarray::arr1(&[1.5]).into_dyn());
        p
    }

    #[test]
    fn exact_gradient_passes() {
        let b = EmbeddingBatch::new(array![[0.5, -1.0], [2.0, 0.25]], vec![0, 1]).unwrap();
        let r = grad_check(sum_of_squares, &b, &params(), 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.coordinates_checked, 5);
    }

    #[test]
    fn sign_error_is_caught() {
        let b = EmbeddingBatch::new(array![[0.5, -1.0]], vec![0]).unwrap();
        let wrong = |b: &EmbeddingBatch<f64>, p: &Params<f64>| {
            let mut r = sum_of_squares(b, p)?;
            r.grad_embeddings[[0, 1]] *= -1.0;
            Ok(r)
        };
        let r = grad_check(wrong, &b, &params(), 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, Some(Coordinate::Embedding { row: 0, col: 1 }));
    }

    #[test]
    fn flat_region_is_zero_on_both_sides() {
        let b = EmbeddingBatch::new(array![[0.5, -1.0]], vec![0]).unwrap();
        let zero = |b: &EmbeddingBatch<f64>, _: &Params<f64>| Ok(DifferentiableResult::zeros(b.len(), b.dim()));
        let r = grad_check(zero, &b, &Params::new(), 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_names_the_coordinate() {
        let b = EmbeddingBatch::new(array![[1e-5, 1.0]], vec![0]).unwrap();
        let blowup = |b: &EmbeddingBatch<f64>, _: &Params<f64>| {
            let mut r = DifferentiableResult::zeros(b.len(), b.dim());
            r.value = 1.0 / b.vectors()[[0, 0]].max(0.0);
            r.grad_embeddings[[0, 0]] = -r.value * r.value;
            Ok(r)
        };
        let err = grad_check(blowup, &b, &Params::new(), 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, GradCheckError::NonFinite(Coordinate::Embedding { row: 0, col: 0 })));
    }

    #[test]
    fn mismatched_param_keys_rejected() {
        let b = EmbeddingBatch::new(array![[0.5]], vec![0]).unwrap();
        let mut p = Params::new();
        p.insert("v".into(), ndarray::arr1(&[1.0]).into_dyn());
        let with_w = |b: &EmbeddingBatch<f64>, _: &Params<f64>| {
            let mut q = Params::new();
            q.insert("w".into(), ndarray::arr1(&[1.0]).into_dyn());
            sum_of_squares(b, &q)
        };
        let err = grad_check(with_w, &b, &p, 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, GradCheckError::ParamKeys { .. }));
    }
}
