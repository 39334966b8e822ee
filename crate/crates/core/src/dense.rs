//! Small dense kernels on row-major square matrices.

/// In-place lower Cholesky factorisation `A = C C^T`; the strict upper
/// triangle is zeroed. Fails with `(index, pivot)` on the first pivot that is
/// not above `tol`.
pub fn cholesky_in_place(a: &mut [f64], n: usize, tol: f64) -> Result<(), (usize, f64)> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for l in 0..j {
            d -= a[j * n + l] * a[j * n + l];
        }
        if !(d > tol) {
            return Err((j, d));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for l in 0..j {
                s -= a[i * n + l] * a[j * n + l];
            }
            a[i * n + j] = s / d;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Replaces the row vector `x` by `x C^{-T}` for lower-triangular `C`.
pub fn right_solve_transpose(c: &[f64], n: usize, x: &mut [f64]) {
    for j in 0..n {
        let mut s = x[j];
        for l in 0..j {
            s -= c[j * n + l] * x[l];
        }
        x[j] = s / c[j * n + j];
    }
}

/// Solves `C C^T x = b` in place given the lower Cholesky factor `C`.
pub fn cholesky_solve(c: &[f64], n: usize, b: &mut [f64]) {
    right_solve_transpose(c, n, b);
    for j in (0..n).rev() {
        let mut s = b[j];
        for l in j + 1..n {
            s -= c[l * n + j] * b[l];
        }
        b[j] = s / c[j * n + j];
    }
}
