//! Scalar abstraction over plain floats and taped (differentiable) values.
//!
//! Every density, kernel, and bound sampler in this crate is written once,
//! generic over [`Scalar`]. Instantiated at `f64` it runs as ordinary
//! arithmetic (used for evaluation, which needs no gradients); instantiated at
//! [`crate::autodiff::Var`] the same code records a computation graph and the
//! result can be differentiated with respect to any registered input.
//!
//! The trait is deliberately one-directional about mixed arithmetic: `S ⊕ f64`
//! is required, `f64 ⊕ S` is not. Expressions like `1 - x` are written
//! `-x + 1.0` so that a single set of operator impls covers both backends.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Current numeric value.
    fn value(self) -> f64;

    /// A constant with value `c` living in the same context as `self`
    /// (for taped values: on the same tape, with zero derivative).
    fn lift(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    #[inline]
    fn sigmoid(self) -> f64 {
        stable_sigmoid(self)
    }
    #[inline]
    fn softplus(self) -> f64 {
        stable_softplus(self)
    }
    #[inline]
    fn powi(self, n: i32) -> f64 {
        f64::powi(self, n)
    }
}

/// Numerically stable logistic function, exact at the tails.
#[inline]
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`; never evaluates `exp` of a large
/// positive argument.
#[inline]
pub fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of the logistic function on (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of softplus on (0, ∞): `ln(e^y − 1)`, stable for large `y`.
#[inline]
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// Sum over a non-empty slice.
pub fn sum_slice<S: Scalar>(xs: &[S]) -> S {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = acc + x;
    }
    acc
}

/// Dot product of two non-empty, equal-length slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Max-shifted log-sum-exp over a non-empty slice. The shift is treated as a
/// constant, which leaves the derivative exact because the softmax weights
/// sum to one.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let shift = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        // All -inf (or a NaN poisoned the fold): fall back without shifting.
        let mut acc = xs[0].exp();
        for &x in &xs[1..] {
            acc = acc + x.exp();
        }
        return acc.ln();
    }
    let mut acc = (xs[0] - shift).exp();
    for &x in &xs[1..] {
        acc = acc + (x - shift).exp();
    }
    acc.ln() + shift
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_softplus_tails() {
        assert_eq!(stable_sigmoid(0.0), 0.5);
        assert!((stable_sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert!(stable_sigmoid(-40.0) > 0.0);
        assert!((stable_softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(stable_softplus(-100.0) > 0.0);
        assert!((stable_softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-9] {
            assert!((stable_sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        for &y in &[1e-6, 0.1, 1.0, 35.0] {
            assert!((stable_softplus(inverse_softplus(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn log_sum_exp_matches_naive_and_survives_large_inputs() {
        let xs = [1.0, 2.0, 3.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);

        let big = [1000.0, 1000.5];
        let expected = 1000.5 + (1.0 + (-0.5f64).exp()).ln();
        assert!((log_sum_exp(&big) - expected).abs() < 1e-9);
    }
}
