//! Thin safe wrappers over `matrixmultiply::sgemm`.

/// Below this many multiply-adds a plain loop beats the packed kernel.
const SMALL_GEMM: usize = 4096;

/// `c (m×n) = alpha · op(a) · op(b)` (or `+=` when `accumulate`).
///
/// `op(a)` is `m×k`: stored row-major as `[m, k]`, or as `[k, m]` when
/// `a_t`. Likewise `op(b)` is `k×n`, stored `[k, n]` or `[n, k]` when `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    alpha: f32,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    if m * k * n <= SMALL_GEMM {
        small_gemm(m, k, n, a, a_t, b, b_t, c, alpha, accumulate);
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the length assertion above covers every element addressed by
    // the given shapes and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    alpha: f32,
    accumulate: bool,
) {
    let a_at = |i: usize, p: usize| if a_t { a[p * m + i] } else { a[i * k + p] };
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        if !accumulate {
            row.fill(0.0);
        }
        if b_t {
            for (j, cv) in row.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let dot: f32 = if a_t {
                    brow.iter().enumerate().map(|(p, bv)| a[p * m + i] * bv).sum()
                } else {
                    a[i * k..(i + 1) * k].iter().zip(brow).map(|(av, bv)| av * bv).sum()
                };
                *cv += alpha * dot;
            }
        } else {
            for p in 0..k {
                let av = alpha * a_at(i, p);
                for (cv, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cv += av * bv;
                }
            }
        }
    }
}

pub(crate) fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
