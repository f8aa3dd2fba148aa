//! Dense matrix kernels shared by the tape's forward and backward rules.

use crate::par;

/// Matrix operand: row-major storage plus a transpose flag.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    pub transposed: bool,
}

impl<'a> Operand<'a> {
    pub fn plain(data: &'a [f64]) -> Self {
        Self {
            data,
            transposed: false,
        }
    }

    pub fn t(data: &'a [f64]) -> Self {
        Self {
            data,
            transposed: true,
        }
    }
}

/// `op(a) · op(b)` where `op(a)` is `m × k` and `op(b)` is `k × n`.
///
/// Every output entry accumulates over `p = 0..k` in ascending order, so the
/// result for a given row does not depend on how many rows are computed.
pub(crate) fn gemm(a: Operand<'_>, b: Operand<'_>, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_into(&mut out, a, b, m, k, n);
    out
}

pub(crate) fn gemm_into(
    out: &mut [f64],
    a: Operand<'_>,
    b: Operand<'_>,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.data.len(), m * k);
    debug_assert_eq!(b.data.len(), k * n);
    let a_at = |i: usize, p: usize| {
        if a.transposed {
            a.data[p * m + i]
        } else {
            a.data[i * k + p]
        }
    };
    par::for_each_row(out, n, m * k * n, |i, row| {
        if b.transposed {
            // b stored n × k
            for (j, o) in row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (p, bv) in b_row.iter().enumerate() {
                    acc += a_at(i, p) * bv;
                }
                *o = acc;
            }
        } else {
            for p in 0..k {
                let av = a_at(i, p);
                let b_row = &b.data[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    });
}

/// Batched `gemm` over `batch` independent slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batched_gemm(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    transpose_a: bool,
    transpose_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    let (sa, sb) = (m * k, k * n);
    par::for_each_row(&mut out, m * n, batch * m * k * n, |bi, chunk| {
        let a_op = Operand {
            data: &a[bi * sa..(bi + 1) * sa],
            transposed: transpose_a,
        };
        let b_op = Operand {
            data: &b[bi * sb..(bi + 1) * sb],
            transposed: transpose_b,
        };
        // Inner kernel stays sequential; the batch axis carries the parallelism.
        gemm_seq(chunk, a_op, b_op, m, k, n);
    });
    out
}

fn gemm_seq(out: &mut [f64], a: Operand<'_>, b: Operand<'_>, m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_at = |p: usize| {
            if a.transposed {
                a.data[p * m + i]
            } else {
                a.data[i * k + p]
            }
        };
        if b.transposed {
            for (j, o) in row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (p, bv) in b_row.iter().enumerate() {
                    acc += a_at(p) * bv;
                }
                *o = acc;
            }
        } else {
            for p in 0..k {
                let av = a_at(p);
                let b_row = &b.data[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
}
