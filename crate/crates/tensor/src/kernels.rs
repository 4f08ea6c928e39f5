//! Slice-level kernels behind the tensor operations.
//!
//! Every output row is computed by the same instruction sequence no matter
//! where the row sits or how many threads run, so results are reproducible
//! and permuting the rows of the left operand permutes the output exactly.

use rayon::prelude::*;

use crate::real::Real;

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 18;
const ROW_CHUNK: usize = 32;

pub fn transpose<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

#[inline]
fn gemm_rows<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a (m x k) * b (k x n)`, summing over `k` in index order for every entry.
pub fn gemm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    if m == 0 || n == 0 {
        return out;
    }
    if k == 0 {
        return out;
    }
    if m * k * n < PARALLEL_THRESHOLD {
        gemm_rows(a, b, &mut out, k, n);
    } else {
        out.par_chunks_mut(ROW_CHUNK * n)
            .zip(a.par_chunks(ROW_CHUNK * k))
            .for_each(|(o, a)| gemm_rows(a, b, o, k, n));
    }
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let bt = transpose(b, n, k);
    gemm(a, &bt, m, k, n)
}

/// `a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let at = transpose(a, k, m);
    gemm(&at, b, m, k, n)
}
