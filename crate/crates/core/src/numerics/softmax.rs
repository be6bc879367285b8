//! Max-shifted softmax and log-sum-exp helpers.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `log(exp a + exp b)` without overflow. `-inf` encodes zero mass.
///
/// The arguments are ordered by value before combining, so the result is
/// bit-identical under swapping them.
#[inline]
pub fn logaddexp<T: Scalar>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::neg_infinity() {
        return hi;
    }
    if hi == T::infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(xs)` over the entries where `keep` is true; `-inf` if none.
pub fn logsumexp_masked<T: Scalar>(xs: &[T], keep: impl Fn(usize) -> bool) -> T {
    let max = xs
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &x)| x)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = xs
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + sum.ln()
}

/// Writes the masked softmax of one row into `out` and returns its log denominator.
///
/// Masked entries come out as exactly zero. A row with nothing unmasked
/// yields all zeros and `-inf`.
pub fn softmax_row_into<T: Scalar>(logits: &[T], mask: &[bool], out: &mut [T]) -> T {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return max;
    }
    let mut sum = T::zero();
    for ((o, &x), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { (x - max).exp() } else { T::zero() };
        sum += *o;
    }
    let inv = sum.recip();
    out.iter_mut().for_each(|o| *o *= inv);
    max + sum.ln()
}

/// Row-wise softmax over `logits` where `mask[i,j]` marks admissible entries.
///
/// Returns the probabilities and each row's log denominator. A row with no
/// admissible entry is a [`Error::DegenerateRow`].
pub fn softmax_masked<T: Scalar>(
    logits: &Tensor<T>,
    mask: &[bool],
) -> Result<(Tensor<T>, Vec<T>)> {
    let (r, c) = (logits.rows(), logits.cols());
    if mask.len() != r * c {
        return Err(Error::dim("softmax_masked", "mask size differs from logits"));
    }
    let mut probs = vec![T::zero(); r * c];
    let mut log_denoms = Vec::with_capacity(r);
    for i in 0..r {
        let row_mask = &mask[i * c..(i + 1) * c];
        if !row_mask.iter().any(|&m| m) {
            return Err(Error::DegenerateRow { row: i });
        }
        let lse = softmax_row_into(logits.row(i), row_mask, &mut probs[i * c..(i + 1) * c]);
        log_denoms.push(lse);
    }
    Ok((Tensor::matrix(r, c, probs)?, log_denoms))
}
