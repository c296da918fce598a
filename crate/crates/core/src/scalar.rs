//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type: `f32` or `f64`.
///
/// Training and gradient verification run in `f64`; `f32` is supported for
/// evaluation of large embedding tables.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(sum(exp(xs)))` with max subtraction. Empty input yields `-inf`.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let max = xs.clone().into_iter().fold(T::neg_infinity(), |m, x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let s: T = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// Softmax weights of `xs` computed with max subtraction.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs.iter().copied());
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_and_survives_large_inputs() {
        let xs = [0.1_f64, -2.0, 3.5];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - naive).abs() < 1e-12);
        let big = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(big) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp::<f64>([]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[1.0_f32, 2.0, 3.0]);
        let s: f32 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
