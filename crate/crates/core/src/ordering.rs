//! Choice of the SIC decoding order and the end-to-end solve.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Block, ChannelStats, DecodingOrder, SarConstraints, SystemConfig};
use crate::optimizer::{solve_inner, InnerSolution, SolverConfig};

/// Largest number of permutations the exhaustive search will evaluate.
pub const EXHAUSTIVE_CAP: u128 = 40320;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMethod {
    Greedy,
    Exhaustive,
    Fixed(DecodingOrder),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingTag {
    Greedy,
    Exhaustive,
    Fixed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderingResult {
    pub order: DecodingOrder,
    /// Single-user sum rates in nats (empty when not computed).
    pub single_user_rates: Vec<f64>,
    pub ee_bits_per_joule: f64,
    pub method: OrderingTag,
    /// Number of orders passed to the inner solver.
    pub evaluated: usize,
}

/// Best sum rate (nats) user `user` achieves alone with one layer under
/// its own power and exposure budgets.
pub fn single_user_rate(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    user: usize,
    solver: &SolverConfig,
) -> Result<f64> {
    if user >= config.num_users {
        return Err(Error::InvalidConfig(format!("user {user} out of range")));
    }
    let single = SystemConfig {
        num_users: 1,
        num_layers: 1,
        user_antennas: vec![config.user_antennas[user]],
        amp_inv_efficiency: vec![config.amp_inv_efficiency[user]],
        circuit_power: vec![config.circuit_power[user]],
        power_budget: vec![config.power_budget[user]],
        ..config.clone()
    };
    let sol = solve_inner(
        &single,
        &stats.subset(&[user]),
        &DecodingOrder::identity(1, 1),
        &constraints.subset(&[user]),
        &solver.sum_rate(),
    )?;
    Ok(sol.rates.iter().sum())
}

pub fn single_user_rates(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    (0..config.num_users)
        .into_par_iter()
        .map(|k| single_user_rate(config, stats, constraints, k, solver))
        .collect()
}

/// Users by descending rate (ties by ascending index), layers of a user kept together.
pub fn greedy_from_rates(rates: &[f64], num_layers: usize) -> Result<DecodingOrder> {
    let mut users: Vec<usize> = (0..rates.len()).collect();
    users.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]));
    DecodingOrder::user_major(&users, num_layers)
}

pub fn greedy_order(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    solver: &SolverConfig,
) -> Result<(DecodingOrder, Vec<f64>)> {
    let rates = single_user_rates(config, stats, constraints, solver)?;
    Ok((greedy_from_rates(&rates, config.num_layers)?, rates))
}

/// Seeded uniformly random permutation of all blocks.
pub fn random_order(num_users: usize, num_layers: usize, seed: u64) -> DecodingOrder {
    let mut seq: Vec<Block> = (0..num_users * num_layers).map(|i| Block::from_index(i, num_layers)).collect();
    seq.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    DecodingOrder::from_sequence(num_users, num_layers, seq).expect("a permutation of all blocks")
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Evaluates every decoding order and keeps the best; ties go to the
/// lexicographically smallest decoding sequence.
pub fn exhaustive_order(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    solver: &SolverConfig,
) -> Result<(OrderingResult, InnerSolution)> {
    let n = config.num_blocks();
    let count = factorial(n);
    if count > EXHAUSTIVE_CAP {
        return Err(Error::SearchTooLarge { count, cap: EXHAUSTIVE_CAP });
    }
    let orders: Vec<DecodingOrder> = (0..n)
        .permutations(n)
        .map(|p| {
            let seq = p.into_iter().map(|i| Block::from_index(i, config.num_layers)).collect();
            DecodingOrder::from_sequence(config.num_users, config.num_layers, seq)
        })
        .collect::<Result<_>>()?;
    let solutions: Vec<InnerSolution> = orders
        .par_iter()
        .map(|o| solve_inner(config, stats, o, constraints, solver))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in solutions.iter().enumerate() {
        if s.ee_bits_per_joule > solutions[best].ee_bits_per_joule {
            best = i;
        }
    }
    let evaluated = solutions.len();
    let solution = solutions.into_iter().nth(best).expect("at least one order");
    Ok((
        OrderingResult {
            order: orders[best].clone(),
            single_user_rates: Vec::new(),
            ee_bits_per_joule: solution.ee_bits_per_joule,
            method: OrderingTag::Exhaustive,
            evaluated,
        },
        solution,
    ))
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub ordering: OrderingResult,
    pub inner: InnerSolution,
}

/// Picks a decoding order with `method` and solves the covariance design for it.
pub fn solve(
    config: &SystemConfig,
    stats: &ChannelStats,
    constraints: &SarConstraints,
    method: &OrderingMethod,
    solver: &SolverConfig,
) -> Result<Solution> {
    match method {
        OrderingMethod::Greedy => {
            let (order, rates) = greedy_order(config, stats, constraints, solver)?;
            let inner = solve_inner(config, stats, &order, constraints, solver)?;
            Ok(Solution {
                ordering: OrderingResult {
                    order,
                    single_user_rates: rates,
                    ee_bits_per_joule: inner.ee_bits_per_joule,
                    method: OrderingTag::Greedy,
                    evaluated: 1,
                },
                inner,
            })
        }
        OrderingMethod::Exhaustive => {
            let (ordering, inner) = exhaustive_order(config, stats, constraints, solver)?;
            Ok(Solution { ordering, inner })
        }
        OrderingMethod::Fixed(order) => {
            let inner = solve_inner(config, stats, order, constraints, solver)?;
            Ok(Solution {
                ordering: OrderingResult {
                    order: order.clone(),
                    single_user_rates: Vec::new(),
                    ee_bits_per_joule: inner.ee_bits_per_joule,
                    method: OrderingTag::Fixed,
                    evaluated: 1,
                },
                inner,
            })
        }
    }
}
