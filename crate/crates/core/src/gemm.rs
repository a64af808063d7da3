//! Dense row-major matrix products with a fixed summation order.
//!
//! Every output element is computed as `c + a[i][0] * b[0][j] + a[i][1] * b[1][j] + ...`
//! with separate multiply and add roundings, left to right, so results do not depend on
//! blocking or on which instruction set the kernel was compiled for.

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 128;
const NC: usize = 256;

/// `c[i][j] += sum_l a[i][l] * b[l][j]` for `a: m×k`, `b: k×n`, `c: m×n`.
pub fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, k, n, a, b, c) };
            return;
        }
    }
    gemm_generic(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_generic(m, k, n, a, b, c);
}

#[inline(always)]
fn gemm_generic(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // Blocking over k keeps each partial sum in c between panels, so the per-element
    // order is unchanged.
    for l0 in (0..k).step_by(KC) {
        let l1 = (l0 + KC).min(k);
        for j0 in (0..n).step_by(NC) {
            let j1 = (j0 + NC).min(n);
            let j_full = j0 + (j1 - j0) / NR * NR;
            let m_full = m - m % MR;
            for i0 in (0..m_full).step_by(MR) {
                for jt in (j0..j_full).step_by(NR) {
                    tile(i0, jt, (l0, l1), k, n, a, b, c);
                }
                for i in i0..i0 + MR {
                    edge_row(i, (j_full, j1), (l0, l1), k, n, a, b, c);
                }
            }
            for i in m_full..m {
                edge_row(i, (j0, j1), (l0, l1), k, n, a, b, c);
            }
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile(i0: usize, j0: usize, ls: (usize, usize), k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let mut acc = [[0.0f64; NR]; MR];
    for (ii, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i0 + ii) * n + j0..(i0 + ii) * n + j0 + NR]);
    }
    for l in ls.0..ls.1 {
        let bl: &[f64; NR] = b[l * n + j0..l * n + j0 + NR].try_into().unwrap();
        for (ii, row) in acc.iter_mut().enumerate() {
            let av = a[(i0 + ii) * k + l];
            for jj in 0..NR {
                row[jj] += av * bl[jj];
            }
        }
    }
    for (ii, row) in acc.iter().enumerate() {
        c[(i0 + ii) * n + j0..(i0 + ii) * n + j0 + NR].copy_from_slice(row);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn edge_row(
    i: usize,
    js: (usize, usize),
    ls: (usize, usize),
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
) {
    if js.0 == js.1 {
        return;
    }
    let crow = &mut c[i * n + js.0..i * n + js.1];
    for l in ls.0..ls.1 {
        let av = a[i * k + l];
        for (o, x) in crow.iter_mut().zip(&b[l * n + js.0..l * n + js.1]) {
            *o += av * x;
        }
    }
}

/// Row-major transpose of an `rows×cols` matrix.
pub fn transpose(rows: usize, cols: usize, src: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        out.extend((0..rows).map(|r| src[r * cols + c]));
    }
    out
}
