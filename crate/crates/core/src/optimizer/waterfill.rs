use crate::linalg::{self, CMat};

/// Eigenvalue floor applied to the penalty matrix before inversion.
pub const S_FLOOR: f64 = 1e-10;

/// Maximizer of `log det(I + Gamma Q) - tr(S Q)` over PSD `Q`.
///
/// With `S^-1/2 Gamma S^-1/2 = U diag(v) U^H`, the optimum is
/// `S^-1/2 U diag((1 - 1/v)+) U^H S^-1/2`. Eigenvalues of `S` below
/// [`S_FLOOR`] are raised to it.
pub fn water_fill(s: &CMat, gamma: &CMat) -> CMat {
    let n = s.nrows();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    let (s_vals, s_vecs) = linalg::eigh(s);
    let inv_sqrt: Vec<f64> = s_vals.iter().map(|&v| 1.0 / v.max(S_FLOOR).sqrt()).collect();
    let s_inv_sqrt = linalg::reconstruct(&s_vecs, &inv_sqrt);
    let a = &s_inv_sqrt * gamma * &s_inv_sqrt;
    let (modes, u) = linalg::eigh(&a);
    let levels: Vec<f64> = modes.iter().map(|&v| if v > 1.0 { 1.0 - 1.0 / v } else { 0.0 }).collect();
    if levels.iter().all(|&l| l == 0.0) {
        return CMat::zeros(n, n);
    }
    let inner = linalg::reconstruct(&u, &levels);
    linalg::hermitize(&(&s_inv_sqrt * inner * &s_inv_sqrt))
}

/// `log det(I + Gamma Q) - tr(S Q)` for Hermitian PSD `Gamma`, `Q`.
pub fn water_fill_objective(s: &CMat, gamma: &CMat, q: &CMat) -> f64 {
    let n = q.nrows();
    let sq = linalg::psd_sqrt(q);
    linalg::logdet_hpd(&(CMat::identity(n, n) + &sq * gamma * &sq)) - linalg::trace_product_re(s, q)
}

/// `(I + Gamma Q)^-1 Gamma`, the gradient of `log det(I + Gamma Q)` in `Q`,
/// in the Hermitian form `G^1/2 (I + G^1/2 Q G^1/2)^-1 G^1/2`.
pub fn log_det_gradient(gamma: &CMat, q: &CMat) -> CMat {
    let n = q.nrows();
    let g = linalg::psd_sqrt(gamma);
    let inner = CMat::identity(n, n) + &g * q * &g;
    linalg::hermitize(&(&g * linalg::inverse_hpd(&inner) * &g))
}
