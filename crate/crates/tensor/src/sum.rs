//! Order-independent summation.
//!
//! Terms are quantized onto a fixed-point grid anchored at the largest
//! magnitude (100 significant bits) and added as 128-bit integers. Integer
//! addition is associative, so the result depends only on the multiset of
//! terms. Reductions over the node axis use this so relabeling the nodes of
//! a graph permutes model outputs bit for bit.

use rayon::prelude::*;

use crate::real::Real;

const GRID_BITS: i32 = 100;

#[inline]
fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// `x * 2^e` without intermediate overflow for any exponent that keeps the
/// result representable.
#[inline]
fn scale_pow2(mut x: f64, mut e: i32) -> f64 {
    while e > 1000 {
        x *= pow2(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= pow2(-1000);
        e += 1000;
    }
    x * pow2(e)
}

#[inline]
fn exponent(x: f64) -> i32 {
    let biased = ((x.to_bits() >> 52) & 0x7ff) as i32;
    if biased == 0 {
        -1022
    } else {
        biased - 1023
    }
}

/// Fixed-point grid for a set of terms whose largest magnitude is `max_abs`.
#[derive(Clone, Copy, Debug)]
pub struct Grid {
    shift: i32,
}

impl Grid {
    /// `None` when every term is zero or the maximum is not finite.
    #[inline]
    pub fn for_max(max_abs: f64) -> Option<Self> {
        if max_abs == 0.0 || !max_abs.is_finite() {
            return None;
        }
        Some(Self {
            shift: GRID_BITS - 1 - exponent(max_abs),
        })
    }

    #[inline]
    pub fn quantize(self, x: f64) -> i128 {
        scale_pow2(x, self.shift) as i128
    }

    #[inline]
    pub fn restore(self, acc: i128) -> f64 {
        scale_pow2(acc as f64, -self.shift)
    }
}

/// Sum of `terms` that does not depend on their order.
pub fn invariant_sum(terms: &[f64]) -> f64 {
    let max = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    match Grid::for_max(max) {
        Some(grid) => grid.restore(terms.iter().map(|&v| grid.quantize(v)).sum()),
        None if max == 0.0 => 0.0,
        None => terms.iter().sum(),
    }
}

/// Generic wrapper over [`invariant_sum`].
pub fn invariant_sum_t<T: Real>(terms: &[T]) -> T {
    let wide: Vec<f64> = terms.iter().map(|x| x.to_f64()).collect();
    T::from_f64(invariant_sum(&wide))
}

fn invariant_gemm_row<T: Real>(arow: &[T], b: &[T], n: usize, out: &mut [T]) {
    let mut max = vec![0.0f64; n];
    for (p, &av) in arow.iter().enumerate() {
        let av = av.to_f64();
        for (m, &bv) in max.iter_mut().zip(&b[p * n..(p + 1) * n]) {
            *m = m.max((av * bv.to_f64()).abs());
        }
    }
    let grids: Vec<Option<Grid>> = max.iter().map(|&m| Grid::for_max(m)).collect();
    let mut acc = vec![0i128; n];
    let mut fallback = vec![0.0f64; n];
    for (p, &av) in arow.iter().enumerate() {
        let av = av.to_f64();
        for c in 0..n {
            let term = av * b[p * n + c].to_f64();
            match grids[c] {
                Some(g) => acc[c] += g.quantize(term),
                None => fallback[c] += term,
            }
        }
    }
    for c in 0..n {
        out[c] = T::from_f64(match grids[c] {
            Some(g) => g.restore(acc[c]),
            None => fallback[c],
        });
    }
}

/// `a (m x k) * b (k x n)` where each entry's sum over `k` is
/// order-independent, so permuting the shared inner index leaves the
/// product bit-identical.
pub fn gemm_invariant<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if m * k * n < 1 << 16 {
        for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
            invariant_gemm_row(arow, b, n, orow);
        }
    } else {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(orow, arow)| invariant_gemm_row(arow, b, n, orow));
    }
    out
}
