//! Deterministic equivalents of the hardened ergodic rates.
//!
//! For a target pair with interference-plus-noise diagonal `K` and covariance
//! `Q`, the auxiliary quantities satisfy
//!
//! ```text
//! Gamma       = V  theta(Phi~^-1 K^-1) V^H          (N x N)
//! Gamma~      = theta~(Q^1/2 Phi^-1 Q^1/2)           (M, diagonal)
//! Phi~        = I + Gamma~ K^-1                      (M, diagonal)
//! Phi         = I + Q^1/2 Gamma Q^1/2                (N x N)
//! ```
//!
//! and the approximation of `E log det(K + H~ V^H Q V H~^H)` is
//! `log det(I + Gamma Q) + log det(Gamma~ + K) - tr(I - Phi~^-1)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{
    self, theta_of_diagonal, Block, ChannelStats, CovarianceSet, DecodingOrder, SystemConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeOptions {
    /// Stop once `||Phi(u) - Phi(u-1)||_F^2` drops to this value.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for DeOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 500 }
    }
}

impl DeOptions {
    /// Tight setting used inside the optimizer, where rate values enter
    /// monotonicity checks.
    pub fn precise() -> Self {
        Self { tolerance: 1e-22, max_iters: 500 }
    }
}

#[derive(Clone, Debug)]
pub struct DeParams {
    /// `N x N` Hermitian.
    pub gamma: CMat,
    /// Diagonal of the `M x M` matrix.
    pub gamma_tilde: DVector<f64>,
    /// `N x N` Hermitian.
    pub phi: CMat,
    /// Diagonal of the `M x M` matrix, entries >= 1.
    pub phi_tilde: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Residual after every iteration.
    pub residuals: Vec<f64>,
}

impl DeParams {
    /// `1 / (K + Gamma~)`: derivative of the approximation with respect to
    /// the diagonal of `K`.
    pub fn interference_sensitivity(&self, k_diag: &DVector<f64>) -> DVector<f64> {
        k_diag.zip_map(&self.gamma_tilde, |k, g| 1.0 / (k + g))
    }
}

/// Runs the alternating fixed point for one user/covariance/interference triple.
///
/// `initial_phi` defaults to the identity. The update is damped by one half
/// after the residual grows twice in a row.
pub fn de_fixed_point_with(
    stats: &ChannelStats,
    user: usize,
    q: &CMat,
    k_diag: &DVector<f64>,
    opts: &DeOptions,
    initial_phi: Option<&CMat>,
) -> Result<DeParams> {
    let n = stats.user_antennas(user);
    let m = stats.bs_antennas();
    if q.nrows() != n || q.ncols() != n || k_diag.len() != m {
        return Err(Error::Dimension("DE fixed point: shape mismatch".into()));
    }
    let sqrt_q = linalg::psd_sqrt(q);
    let v = stats.user_basis(user);

    let mut phi = match initial_phi {
        Some(p) if p.nrows() == n => p.clone(),
        _ => CMat::identity(n, n),
    };
    let mut rho = 1.0;
    let mut increases = 0usize;
    let mut residuals = Vec::new();

    for it in 1..=opts.max_iters {
        let phi_inv = linalg::inverse_hpd(&phi);
        let t = linalg::hermitize(&(&sqrt_q * phi_inv * &sqrt_q));
        let gamma_tilde = model::theta_tilde(stats, user, &t)?;
        let phi_tilde = DVector::from_iterator(
            m,
            gamma_tilde.iter().zip(k_diag.iter()).map(|(g, k)| 1.0 + g / k),
        );
        let weights = DVector::from_iterator(
            m,
            gamma_tilde.iter().zip(k_diag.iter()).map(|(g, k)| 1.0 / (k + g)),
        );
        let gamma = linalg::conj_diag(v, &theta_of_diagonal(stats, user, &weights));
        let phi_new = linalg::hermitize(&(CMat::identity(n, n) + &sqrt_q * &gamma * &sqrt_q));
        let residual = linalg::frobenius_sq(&(&phi_new - &phi));

        if let Some(&prev) = residuals.last() {
            if residual > prev {
                increases += 1;
                if increases >= 2 {
                    rho = 0.5;
                }
            } else {
                increases = 0;
            }
        }
        residuals.push(residual);

        // below this the residual is rounding noise
        let floor = (1e-14 * linalg::frobenius_sq(&phi_new).sqrt()).powi(2);
        let converged = residual <= opts.tolerance.max(floor);
        phi = if rho < 1.0 && !converged {
            &phi * linalg::c(1.0 - rho) + &phi_new * linalg::c(rho)
        } else {
            phi_new
        };
        if converged {
            return Ok(DeParams {
                gamma,
                gamma_tilde,
                phi,
                phi_tilde,
                iterations: it,
                residual,
                residuals,
            });
        }
    }
    Err(Error::DeNotConverged {
        iterations: opts.max_iters,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Fixed point for `target` under decoding order `order`.
pub fn de_fixed_point(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    target: Block,
    opts: &DeOptions,
) -> Result<DeParams> {
    let k_diag = model::interference_cov(config, stats, q, order, target)?;
    de_fixed_point_with(stats, target.user, q.get(target), &k_diag, opts, None)
}

/// `log det(I + Gamma Q) + log det(Gamma~ + K) - tr(I - Phi~^-1)` in nats.
pub fn de_rate_plus(params: &DeParams, q: &CMat, k_diag: &DVector<f64>) -> f64 {
    let sqrt_q = linalg::psd_sqrt(q);
    let n = q.nrows();
    // Sylvester: det(I + Gamma Q) = det(I + Q^1/2 Gamma Q^1/2)
    let inner = CMat::identity(n, n) + &sqrt_q * &params.gamma * &sqrt_q;
    let own = linalg::logdet_hpd(&inner);
    let bs: f64 = params
        .gamma_tilde
        .iter()
        .zip(k_diag.iter())
        .zip(params.phi_tilde.iter())
        .map(|((g, k), pt)| (g + k).ln() - (1.0 - 1.0 / pt))
        .sum();
    own + bs
}

/// `log det(K)` for a diagonal `K`.
pub fn log_det_diag(k_diag: &DVector<f64>) -> f64 {
    k_diag.iter().map(|k| k.ln()).sum()
}

/// `log det(sigma^2 I + sum of interferer second moments)` in nats.
pub fn rate_minus(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    target: Block,
) -> Result<f64> {
    Ok(log_det_diag(&model::interference_cov(config, stats, q, order, target)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeEvaluation {
    /// System EE in bits/Joule.
    pub ee_bits_per_joule: f64,
    /// Per-block rates in nats (user-major), clamped at zero.
    pub rates: Vec<f64>,
    /// Blocks whose raw approximation came out negative.
    pub negative_blocks: Vec<usize>,
    /// Sum rate in bits/s.
    pub sum_rate_bps: f64,
    /// Total power consumption in watts.
    pub power: f64,
}

/// Energy efficiency of `q` under the deterministic-equivalent rates.
pub fn de_ee(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    opts: &DeOptions,
) -> Result<DeEvaluation> {
    let mut rates = Vec::with_capacity(config.num_blocks());
    let mut negative_blocks = Vec::new();
    for idx in 0..config.num_blocks() {
        let b = Block::from_index(idx, config.num_layers);
        let k_diag = model::interference_cov(config, stats, q, order, b)?;
        let params = de_fixed_point_with(stats, b.user, q.get(b), &k_diag, opts, None)?;
        let r = de_rate_plus(&params, q.get(b), &k_diag) - log_det_diag(&k_diag);
        if r < 0.0 {
            if r < -1e-12 {
                negative_blocks.push(idx);
            }
            rates.push(0.0);
        } else {
            rates.push(r);
        }
    }
    Ok(summarize(config, q, rates, negative_blocks))
}

pub(crate) fn summarize(
    config: &SystemConfig,
    q: &CovarianceSet,
    rates: Vec<f64>,
    negative_blocks: Vec<usize>,
) -> DeEvaluation {
    let power = model::power_consumption(config, q);
    let total: f64 = rates.iter().sum();
    let sum_rate_bps = config.bandwidth * total / std::f64::consts::LN_2;
    DeEvaluation { ee_bits_per_joule: sum_rate_bps / power, rates, negative_blocks, sum_rate_bps, power }
}
