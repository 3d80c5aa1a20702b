//! Raw row-major kernels shared by the tape and the graph code.

use rayon::prelude::*;

use super::Real;
use crate::parallel::use_parallel;

/// Inner product with four interleaved partial sums, combined in a fixed
/// order so results do not depend on the machine.
#[inline]
pub(crate) fn dot(a: &[Real], b: &[Real]) -> Real {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

const MR: usize = 4;
const NR: usize = 8;

/// Rows `i0..i0 + out.len() / n` of `a · b`. Full `MR × NR` tiles keep their
/// accumulators in registers; every entry is summed over `p` in increasing
/// order, so the result does not depend on the tiling.
#[inline(always)]
fn matmul_rows_generic(a: &[Real], b: &[Real], k: usize, n: usize, out: &mut [Real]) {
    let rows = out.len() / n;
    let mut i0 = 0;
    while i0 < rows {
        let mr = MR.min(rows - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if mr == MR && nr == NR {
                let mut acc = [[0.0 as Real; NR]; MR];
                let a_rows: [&[Real]; MR] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
                for p in 0..k {
                    let b_tile: &[Real; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
                    for r in 0..MR {
                        let av = a_rows[r][p];
                        for c in 0..NR {
                            acc[r][c] += av * b_tile[c];
                        }
                    }
                }
                for (r, acc_row) in acc.iter().enumerate() {
                    out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_row);
                }
            } else {
                for r in 0..mr {
                    let a_row = &a[(i0 + r) * k..(i0 + r + 1) * k];
                    for c in 0..nr {
                        let mut s = 0.0;
                        for (p, &ap) in a_row.iter().enumerate() {
                            s += ap * b[p * n + j0 + c];
                        }
                        out[(i0 + r) * n + j0 + c] = s;
                    }
                }
            }
            j0 += NR;
        }
        i0 += MR;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_rows_avx2(a: &[Real], b: &[Real], k: usize, n: usize, out: &mut [Real]) {
    matmul_rows_generic(a, b, k, n, out)
}

/// Wider registers change speed only: there is no fused multiply-add, so
/// every product and sum rounds the same way on both paths.
fn matmul_rows(a: &[Real], b: &[Real], k: usize, n: usize, out: &mut [Real]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { matmul_rows_avx2(a, b, k, n, out) };
    }
    matmul_rows_generic(a, b, k, n, out)
}

/// `a [m×k] · b [k×n]`.
pub(crate) fn matmul(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    if n == 0 || m == 0 {
        return out;
    }
    let block = 16 * MR;
    if use_parallel(m * k * n) {
        out.par_chunks_mut(block * n)
            .enumerate()
            .for_each(|(bi, o)| matmul_rows(&a[bi * block * k..], b, k, n, o));
    } else {
        matmul_rows(a, b, k, n, &mut out);
    }
    out
}

/// Row-major transpose of an `m × k` matrix.
pub(crate) fn transpose(a: &[Real], m: usize, k: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            out[p * m + i] = a[i * k + p];
        }
    }
    out
}

/// `g [m×n] · bᵀ` where `b` is `[k×n]`; the gradient with respect to the
/// left factor of a product.
pub(crate) fn matmul_grad_left(g: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    matmul(g, &transpose(b, k, n), m, n, k)
}

/// `aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`; the gradient with
/// respect to the right factor.
pub(crate) fn matmul_grad_right(a: &[Real], g: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    matmul(&transpose(a, m, k), g, k, m, n)
}
