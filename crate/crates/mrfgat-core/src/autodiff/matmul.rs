//! Thin safe wrappers over `matrixmultiply::dgemm`.
//!
//! Transposed operands are expressed through strides, so backward passes
//! never materialize a transposed copy.

/// `c[m,n] = a @ b + beta * c`, with `a`/`b` read through explicit strides.
///
/// `beta = 0.0` overwrites `c`, `beta = 1.0` accumulates into it.
pub(crate) fn dgemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n, "gemm output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
