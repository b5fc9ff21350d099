//! Small complex linear-algebra helpers shared across the pipeline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Force exact Hermitian symmetry: (A + A^H) / 2.
pub fn hermitize(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
        }
    }
    out
}

/// Hermitian square-root factor via eigendecomposition, clipping negative
/// eigenvalues to zero. Returns S with S S^H = A (up to the clip).
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let eig = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= C64::new(s, 0.0);
        }
    }
    // S = U sqrt(Λ) U^H
    &scaled * eig.eigenvectors.adjoint()
}

/// Cholesky of a Hermitian positive-definite matrix.
pub fn hermitian_cholesky(a: &CMat) -> Option<Cholesky<C64, Dyn>> {
    Cholesky::new(a.clone())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    let eig = a.clone().symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Trace of a complex matrix (real part; Hermitian inputs have real trace).
pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// Draw a standard circularly-symmetric complex Gaussian vector:
/// each entry CN(0, 1), i.e. re/im ~ N(0, 1/2).
pub fn sample_cn_vector<R: Rng>(n: usize, rng: &mut R) -> CVec {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVec::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * s, im * s)
    })
}

/// Frobenius norm of the difference relative to the norm of `reference`.
pub fn rel_frobenius(a: &CMat, reference: &CMat) -> f64 {
    let denom = reference.norm();
    if denom == 0.0 {
        return a.norm();
    }
    (a - reference).norm() / denom
}
