//! Comparator schemes with one covariance per user, and the power-backoff
//! variants of the proposed design.

use serde::{Deserialize, Serialize};

use crate::de::{self, DeOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, ChannelStats, CovarianceSet, DecodingOrder, SarConstraints, SystemConfig};
use crate::optimizer::{solve_inner, solve_model, InnerSolution, SolverConfig};
use crate::ordering;
use crate::rates::RateModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineScheme {
    /// SIC over users in the greedy order.
    Noma,
    /// Joint reception treating other users as noise.
    Sdma,
    /// Equal bandwidth split.
    Fdma,
    /// Equal time split.
    Tdma,
}

impl BaselineScheme {
    pub const ALL: [BaselineScheme; 4] = [Self::Noma, Self::Sdma, Self::Fdma, Self::Tdma];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Noma => "noma",
            Self::Sdma => "sdma",
            Self::Fdma => "fdma",
            Self::Tdma => "tdma",
        }
    }
}

/// One-layer version of `config`.
fn per_user(config: &SystemConfig) -> SystemConfig {
    config.with_layers(1)
}

/// Rate model of `scheme` on a one-layer configuration. `user_order` is
/// the NOMA decoding order (first decoded first).
pub fn baseline_model(scheme: BaselineScheme, config: &SystemConfig, user_order: Option<&[usize]>) -> Result<RateModel> {
    let config = per_user(config);
    let k = config.num_users as f64;
    match scheme {
        BaselineScheme::Noma => {
            let users: Vec<usize> = match user_order {
                Some(o) => o.to_vec(),
                None => (0..config.num_users).collect(),
            };
            if users.len() != config.num_users {
                return Err(Error::InvalidOrder("user order must list every user once".into()));
            }
            RateModel::sic(&config, &DecodingOrder::user_major(&users, 1)?)
        }
        BaselineScheme::Sdma => RateModel::interference_as_noise(&config),
        BaselineScheme::Fdma => RateModel::orthogonal(&config, config.noise_power / k, 1.0 / k),
        BaselineScheme::Tdma => RateModel::orthogonal(&config, config.noise_power, 1.0 / k),
    }
}

/// DE rate (nats, including the scheme's time/bandwidth fraction) of `user`.
pub fn baseline_rate(
    scheme: BaselineScheme,
    config: &SystemConfig,
    stats: &ChannelStats,
    q_users: &CovarianceSet,
    user: usize,
    user_order: Option<&[usize]>,
) -> Result<f64> {
    let model = baseline_model(scheme, config, user_order)?;
    model.check(&per_user(config), stats, q_users)?;
    let state = model.evaluate(stats, q_users, &DeOptions::precise(), None)?;
    Ok(state.weighted_rates(&model)[user])
}

#[derive(Clone, Debug)]
pub struct BaselineSolution {
    pub scheme: BaselineScheme,
    /// NOMA decoding order of users.
    pub user_order: Option<Vec<usize>>,
    pub inner: InnerSolution,
}

/// Maximizes the EE of `scheme` under the same constraints as the proposed design.
pub fn solve_baseline(
    scheme: BaselineScheme,
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    solver: &SolverConfig,
) -> Result<BaselineSolution> {
    let cfg = per_user(config);
    let user_order = if scheme == BaselineScheme::Noma {
        let (order, _) = ordering::greedy_order(&cfg, stats, constraints, solver)?;
        Some(order.user_sequence())
    } else {
        None
    };
    let model = baseline_model(scheme, &cfg, user_order.as_deref())?;
    let inner = solve_model(&cfg, stats, &model, constraints, solver, None)?;
    Ok(BaselineSolution { scheme, user_order, inner })
}

#[derive(Clone, Debug)]
pub struct BackoffSolution {
    pub covariances: CovarianceSet,
    pub ee_bits_per_joule: f64,
    pub sum_rate_bps: f64,
    /// Per-user scaling applied.
    pub alpha: Vec<f64>,
    /// Solution of the problem without exposure constraints.
    pub unconstrained: InnerSolution,
}

/// Solves without exposure constraints, then scales each user down until
/// every exposure budget holds.
pub fn adaptive_backoff(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    order: &DecodingOrder,
    solver: &SolverConfig,
) -> Result<BackoffSolution> {
    constraints.check_config(config)?;
    let free = solve_inner(config, stats, order, &SarConstraints::none(config.num_users), solver)?;
    let sar = model::sar_values(constraints, &free.covariances);
    let alpha: Vec<f64> = (0..config.num_users)
        .map(|k| {
            constraints
                .user(k)
                .iter()
                .zip(&sar[k])
                .map(|(c, &v)| if v > 0.0 { c.budget / v } else { f64::INFINITY })
                .fold(1.0, f64::min)
        })
        .collect();
    let q = free.covariances.scale_users(&alpha);
    let eval = de::de_ee(config, stats, &q, order, &solver.de)?;
    Ok(BackoffSolution {
        covariances: q,
        ee_bits_per_joule: eval.ee_bits_per_joule,
        sum_rate_bps: eval.sum_rate_bps,
        alpha,
        unconstrained: free,
    })
}

/// Largest exposure any covariance within user `k`'s power budget can cause:
/// `max_a P_k lambda_max(R_a)`, together with the matching backoff factor.
pub fn worst_case_factor(config: &SystemConfig, constraints: &SarConstraints, k: usize) -> f64 {
    constraints
        .user(k)
        .iter()
        .map(|c| {
            let worst = config.power_budget[k] * linalg::max_eigenvalue(c.matrix());
            if worst > 0.0 { c.budget / worst } else { f64::INFINITY }
        })
        .fold(1.0, f64::min)
}

/// Shrinks the power budgets so that no covariance can exceed an exposure
/// budget, then solves without exposure constraints.
pub fn worst_case_backoff(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    order: &DecodingOrder,
    solver: &SolverConfig,
) -> Result<BackoffSolution> {
    constraints.check_config(config)?;
    let alpha: Vec<f64> = (0..config.num_users).map(|k| worst_case_factor(config, constraints, k)).collect();
    let budgets = config.power_budget.iter().zip(&alpha).map(|(p, a)| p * a).collect();
    let reduced = config.with_power_budgets(budgets);
    let sol = solve_inner(&reduced, stats, order, &SarConstraints::none(config.num_users), solver)?;
    Ok(BackoffSolution {
        covariances: sol.covariances.clone(),
        ee_bits_per_joule: sol.ee_bits_per_joule,
        sum_rate_bps: sol.sum_rate_bps,
        alpha,
        unconstrained: sol,
    })
}
