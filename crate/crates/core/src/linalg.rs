//! Dense helpers: largest singular value of a complex block.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Largest singular value of `m`, from the top eigenvalue of the Hermitian
/// Gram matrix `M* M` embedded as the real symmetric `[[A, -B], [B, A]]`.
pub fn largest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let mut emb = DMatrix::<f64>::zeros(2 * c, 2 * c);
    for i in 0..c {
        for j in 0..c {
            let g = gram[(i, j)];
            emb[(i, j)] = g.re;
            emb[(i + c, j + c)] = g.re;
            emb[(i, j + c)] = -g.im;
            emb[(i + c, j)] = g.im;
        }
    }
    let top = emb
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    libm::sqrt(top.max(0.0))
}

/// Largest singular value of a real block.
pub fn largest_singular_value_real(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let gram = if c <= r {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let top = gram
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    libm::sqrt(top.max(0.0))
}
