//! Small dense Hermitian helpers on top of `nalgebra`.
//!
//! Everything in the crate works with `DMatrix<Complex64>`; diagonal
//! matrices that are known to be real (the beam-domain maps, interference
//! covariances) are carried as `DVector<f64>` holding the diagonal only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

/// Eigenvalues below this (relative to the largest magnitude) are treated as zero
/// when taking PSD square roots.
const LOGDET_FLOOR: f64 = 1e-14;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(A + A^H) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5)
}

/// Max-abs entry of `A - A^H`.
pub fn hermitian_deviation(a: &CMat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Max-abs entry of `U^H U - I`.
pub fn unitary_deviation(u: &CMat) -> f64 {
    let g = u.adjoint() * u;
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { c(1.0) } else { c(0.0) };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
/// The input is symmetrized first.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitize(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigh(a).0.last().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(a: &CMat) -> f64 {
    eigh(a).0.first().copied().unwrap_or(0.0)
}

/// `V diag(d) V^H` for real `d`.
pub fn reconstruct(vectors: &CMat, values: &[f64]) -> CMat {
    let mut scaled = vectors.clone();
    for (j, &d) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d);
    }
    hermitize(&(scaled * vectors.adjoint()))
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn spectral_map(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (values, vectors) = eigh(a);
    let mapped: Vec<f64> = values.into_iter().map(f).collect();
    reconstruct(&vectors, &mapped)
}

/// Principal square root of a PSD matrix; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(a: &CMat) -> CMat {
    spectral_map(a, |x| x.max(0.0).sqrt())
}

/// Projection onto the PSD cone (Frobenius norm).
pub fn psd_project(a: &CMat) -> CMat {
    spectral_map(a, |x| x.max(0.0))
}

/// `log det(A)` for Hermitian positive-definite `A`.
///
/// Uses a Cholesky factorization; if that fails, falls back to the
/// eigenvalues with a floor of `1e-14 * tr(A)`.
pub fn logdet_hpd(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if let Some(chol) = hermitize(a).cholesky() {
        let l = chol.l_dirty();
        return (0..a.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    }
    let trace = trace_re(a).abs().max(f64::MIN_POSITIVE);
    let floor = LOGDET_FLOOR * trace;
    eigh(a).0.iter().map(|&v| v.max(floor).ln()).sum()
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(a: &CMat) -> CMat {
    match hermitize(a).cholesky() {
        Some(chol) => hermitize(&chol.inverse()),
        None => spectral_map(a, |x| 1.0 / x.max(f64::MIN_POSITIVE)),
    }
}

pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// `Re tr(A B)` without forming the product.
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `V diag(d) V^H`.
pub fn conj_diag(v: &CMat, d: &DVector<f64>) -> CMat {
    reconstruct(v, d.as_slice())
}

/// Real diagonal of `V^H X V`.
pub fn diag_of_congruence(v: &CMat, x: &CMat) -> DVector<f64> {
    let n = v.ncols();
    let xv = x * v;
    DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..v.nrows() {
                acc += v[(i, j)].conj() * xv[(i, j)];
            }
            acc.re
        }),
    )
}

pub fn real_diag(d: &DVector<f64>) -> CMat {
    CMat::from_diagonal(&d.map(c))
}

/// Unitary DFT matrix with entries `exp(-j 2 pi a b / m) / sqrt(m)`.
pub fn dft_matrix(m: usize) -> CMat {
    let scale = 1.0 / (m as f64).sqrt();
    CMat::from_fn(m, m, |a, b| {
        // reduce the exponent mod m first to keep the phase accurate
        let k = ((a * b) % m) as f64;
        Complex64::from_polar(scale, -2.0 * std::f64::consts::PI * k / m as f64)
    })
}

pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}
