//! Distance and similarity kernels plus numerically stable softmax.
//!
//! The slice kernels (`*_slice`) assume equal lengths and are used on hot
//! paths after dimensions have been validated once. The `DenseVector`
//! variants check dimensions and return [`Error::Dimension`].

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::DenseVector;

#[inline]
pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

#[inline]
pub fn dot_slice<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub fn euclidean_sq_slice<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

#[inline]
pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot_slice(a, a)
}

#[inline]
pub fn norm<T: Real>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

pub fn dot<T: Real>(a: &DenseVector<T>, b: &DenseVector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    Ok(dot_slice(a.as_slice(), b.as_slice()))
}

pub fn euclidean_sq<T: Real>(a: &DenseVector<T>, b: &DenseVector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    Ok(euclidean_sq_slice(a.as_slice(), b.as_slice()))
}

/// Cosine similarity; zero-norm inputs are rejected.
pub fn cosine<T: Real>(a: &DenseVector<T>, b: &DenseVector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(Error::DegenerateVector);
    }
    let c = dot_slice(a.as_slice(), b.as_slice()) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Softmax over at least two finite logits.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.len() < 2 {
        return Err(Error::Arity(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(pos) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(softmax_unchecked(logits))
}

/// Max-shifted softmax without arity checks; a single logit maps to `[1]`.
pub(crate) fn softmax_unchecked<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(z_i)` computed with max-subtraction.
pub(crate) fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + total.ln()
}
