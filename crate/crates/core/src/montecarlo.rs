//! Sampling oracle for the ergodic rates.
//!
//! Channels are drawn in the beam domain: entry `(i, j)` of `H~_k` is
//! circular complex Gaussian with variance `[Omega_k]_ij`. Because the BS
//! basis is unitary it cancels from every log-det, so rates are computed
//! with `X = V_k^H Q V_k` and `H~_k` directly.
//!
//! Sample `n` of user `k` comes from a ChaCha8 generator seeded with the
//! run seed on stream `n * K + k`, so every draw is addressable on its own
//! and serial and parallel runs see identical values.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, c, CMat};
use crate::model::{self, Block, ChannelStats, CovarianceSet, DecodingOrder, SystemConfig};
use crate::rates::RateModel;

pub const DEFAULT_SAMPLES: usize = 1000;

/// One draw of every user's beam-domain channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    /// `M x N_k` per user.
    pub beam: Vec<CMat>,
}

impl ChannelSample {
    /// Spatial-domain channel `U H~_k V_k^H`.
    pub fn spatial(&self, stats: &ChannelStats, k: usize) -> CMat {
        stats.bs_basis() * &self.beam[k] * stats.user_basis(k).adjoint()
    }
}

fn draw_user(stats: &ChannelStats, seed: u64, index: u64, k: usize) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index * stats.num_users() as u64 + k as u64);
    let omega = stats.coupling(k);
    // column-major fill order
    CMat::from_fn(omega.nrows(), omega.ncols(), |i, j| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im) * (omega[(i, j)] / 2.0).sqrt()
    })
}

/// Draw number `index` of the run identified by `seed`.
pub fn sample_channel(stats: &ChannelStats, seed: u64, index: u64) -> ChannelSample {
    ChannelSample { beam: (0..stats.num_users()).map(|k| draw_user(stats, seed, index, k)).collect() }
}

pub fn sample_channels(stats: &ChannelStats, count: usize, seed: u64) -> Vec<ChannelSample> {
    (0..count as u64).map(|n| sample_channel(stats, seed, n)).collect()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Per-sample interference covariance.
    Exact,
    /// Interference replaced by its mean.
    Hardened,
}

/// Both estimators of one block's ergodic rate, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McRate {
    pub exact: f64,
    pub hardened: f64,
}

/// Precomputed per-block factors `X^{1/2} = V^H Q^{1/2} V`.
fn beam_sqrt_factors(stats: &ChannelStats, model: &RateModel, q: &CovarianceSet) -> Vec<Option<CMat>> {
    (0..model.num_blocks())
        .map(|s| {
            let qs = q.block(s);
            if linalg::max_abs(qs) == 0.0 {
                return None;
            }
            let v = stats.user_basis(model.user_of(s));
            Some(v.adjoint() * linalg::psd_sqrt(qs) * v)
        })
        .collect()
}

/// `log det(I_N + B^H diag(1/k) B)`.
fn logdet_whitened(b: &CMat, k_diag: &DVector<f64>) -> f64 {
    let mut scaled = b.clone();
    for i in 0..scaled.nrows() {
        scaled.row_mut(i).scale_mut(1.0 / k_diag[i]);
    }
    let n = b.ncols();
    linalg::logdet_hpd(&(CMat::identity(n, n) + b.adjoint() * scaled)).max(0.0)
}

fn sample_rates(
    stats: &ChannelStats,
    model: &RateModel,
    factors: &[Option<CMat>],
    hardened_k: &[DVector<f64>],
    sample: &ChannelSample,
    estimator: Estimator,
) -> Vec<f64> {
    let m = stats.bs_antennas();
    let products: Vec<Option<CMat>> = factors
        .iter()
        .enumerate()
        .map(|(s, f)| f.as_ref().map(|x| &sample.beam[model.user_of(s)] * x))
        .collect();
    (0..model.num_blocks())
        .map(|t| {
            let Some(bt) = &products[t] else { return 0.0 };
            let term = model.term(t);
            let active: Vec<&CMat> =
                term.interferers.iter().filter_map(|&s| products[s].as_ref()).collect();
            match estimator {
                Estimator::Hardened => logdet_whitened(bt, &hardened_k[t]),
                Estimator::Exact if active.is_empty() => {
                    logdet_whitened(bt, &DVector::from_element(m, term.noise_power))
                }
                Estimator::Exact => {
                    let mut cov = CMat::identity(m, m) * c(term.noise_power);
                    for b in active {
                        cov += b * b.adjoint();
                    }
                    let with = &cov + bt * bt.adjoint();
                    (linalg::logdet_hpd(&with) - linalg::logdet_hpd(&cov)).max(0.0)
                }
            }
        })
        .collect()
}

/// Sample-average rates of every term of `model`, unweighted, in nats.
pub fn model_rates_mc(
    stats: &ChannelStats,
    model: &RateModel,
    q: &CovarianceSet,
    samples: usize,
    seed: u64,
    estimator: Estimator,
) -> Vec<f64> {
    let factors = beam_sqrt_factors(stats, model, q);
    let hardened_k: Vec<DVector<f64>> =
        (0..model.num_blocks()).map(|t| model.interference_diag(stats, q, t)).collect();
    let per_sample: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|n| {
            let sample = sample_channel(stats, seed, n);
            sample_rates(stats, model, &factors, &hardened_k, &sample, estimator)
        })
        .collect();
    (0..model.num_blocks())
        .map(|t| {
            let column: Vec<f64> = per_sample.iter().map(|r| r[t]).collect();
            pairwise_sum(&column) / samples.max(1) as f64
        })
        .collect()
}

/// Both estimators of the ergodic rate of `target` under SIC order `order`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_rate_mc(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    target: Block,
    samples: usize,
    seed: u64,
) -> Result<McRate> {
    let model = RateModel::sic(config, order)?;
    model.check(config, stats, q)?;
    let t = target.index(config.num_layers);
    let exact = model_rates_mc(stats, &model, q, samples, seed, Estimator::Exact)[t];
    let hardened = model_rates_mc(stats, &model, q, samples, seed, Estimator::Hardened)[t];
    Ok(McRate { exact, hardened })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McEvaluation {
    pub ee_bits_per_joule: f64,
    /// Weighted per-term rates in nats.
    pub rates: Vec<f64>,
    pub sum_rate_bps: f64,
    pub power: f64,
    pub samples: usize,
}

/// EE of a general rate model by sampling.
pub fn model_ee_mc(
    config: &SystemConfig,
    stats: &ChannelStats,
    model: &RateModel,
    q: &CovarianceSet,
    samples: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<McEvaluation> {
    model.check(config, stats, q)?;
    let rates: Vec<f64> = model_rates_mc(stats, model, q, samples, seed, estimator)
        .into_iter()
        .zip(model.terms())
        .map(|(r, term)| term.weight * r)
        .collect();
    let power = model::power_consumption(config, q);
    let sum_rate_bps = config.bandwidth * rates.iter().sum::<f64>() / std::f64::consts::LN_2;
    Ok(McEvaluation { ee_bits_per_joule: sum_rate_bps / power, rates, sum_rate_bps, power, samples })
}

/// System EE in bits/Joule under SIC order `order`.
pub fn ee_mc(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    samples: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<McEvaluation> {
    let model = RateModel::sic(config, order)?;
    model_ee_mc(config, stats, &model, q, samples, seed, estimator)
}
