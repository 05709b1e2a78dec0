#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsma_core::channel::{generate_stats, GeneratorParams};
use rsma_core::linalg::{self, c, CMat};
use rsma_core::{ChannelStats, CovarianceSet, SystemConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-scale system: noise 1, bandwidth 1, so SNRs are read off the budgets.
pub fn unit_config(users: usize, layers: usize, m: usize, n: usize, p_max: f64) -> SystemConfig {
    SystemConfig::uniform(users, layers, m, n, 1.0, 1.0, 2.0, 0.1, 0.5, p_max)
}

/// Synthetic statistics with unit average gain.
pub fn unit_stats(seed: u64, m: usize, users: usize, n: usize) -> ChannelStats {
    let params = GeneratorParams { seed, pathloss_db: 0.0, ..Default::default() };
    generate_stats(&params, m, &vec![n; users]).unwrap()
}

/// Diagonal coupling with identity bases.
pub fn diagonal_stats(omegas: Vec<DMatrix<f64>>) -> ChannelStats {
    let m = omegas[0].nrows();
    let users = omegas.iter().map(|o| CMat::identity(o.ncols(), o.ncols())).collect();
    ChannelStats::new(omegas, CMat::identity(m, m), users).unwrap()
}

pub fn random_complex(n: usize, r: &mut impl Rng) -> CMat {
    CMat::from_fn(n, n, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn random_hermitian(n: usize, r: &mut impl Rng) -> CMat {
    linalg::hermitize(&random_complex(n, r))
}

/// Random PSD matrix with trace `trace`.
pub fn random_psd(n: usize, trace: f64, r: &mut impl Rng) -> CMat {
    let a = random_complex(n, r);
    let q = &a * a.adjoint();
    let t = linalg::trace_re(&q);
    q * c(trace / t)
}

/// Random covariances using `fill` of every user's power budget.
pub fn random_covariances(config: &SystemConfig, fill: f64, r: &mut impl Rng) -> CovarianceSet {
    let l = config.num_layers;
    let mut blocks = Vec::new();
    for k in 0..config.num_users {
        let n = config.user_antennas[k];
        let split: Vec<f64> = (0..l).map(|_| r.random_range(0.2..1.0)).collect();
        let total: f64 = split.iter().sum();
        for s in split {
            blocks.push(random_psd(n, fill * config.power_budget[k] * s / total, r));
        }
    }
    CovarianceSet::new(l, blocks).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
