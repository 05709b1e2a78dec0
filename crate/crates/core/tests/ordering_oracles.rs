mod common;

use common::*;
use nalgebra::DMatrix;
use rsma_core::de::{de_ee, DeOptions};
use rsma_core::linalg;
use rsma_core::model::SarConstraints;
use rsma_core::optimizer::{solve_inner, SolverConfig};
use rsma_core::ordering::{self, greedy_from_rates, OrderingMethod};
use rsma_core::rates::RateModel;
use rsma_core::{CovarianceSet, DecodingOrder, SystemConfig};

fn tight() -> SolverConfig {
    SolverConfig { mm_tol: 1e-12, ao_tol: 1e-12, dinkelbach_tol: 1e-12, max_ao_iters: 2000, ..Default::default() }
}

#[test]
fn stronger_coupling_never_lowers_the_single_user_rate() {
    for seed in 0..10 {
        let config = unit_config(2, 2, 6, 2, 1.5);
        let stats = unit_stats(seed, 6, 2, 2);
        let cons = SarConstraints::reference(2, 2, 0.5).unwrap();
        let solver = SolverConfig::default();
        let base = ordering::single_user_rates(&config, &stats, &cons, &solver).unwrap();
        let doubled = ordering::single_user_rates(&config, &stats.scaled(2.0), &cons, &solver).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!(b >= &(a * (1.0 - 1e-9)), "seed {seed}: {a} -> {b}");
        }
    }
}

/// Iterated classical water-filling: `Q <- WF(Gamma(Q))` with the level set by bisection.
fn classical_capacity(config: &SystemConfig, stats: &rsma_core::ChannelStats) -> f64 {
    let p = config.power_budget[0];
    let model = RateModel::sic(config, &DecodingOrder::identity(1, 1)).unwrap();
    let n = config.user_antennas[0];
    let mut q = CovarianceSet::new(1, vec![linalg::identity(n) * linalg::c(p / n as f64)]).unwrap();
    for _ in 0..500 {
        let state = model.evaluate(stats, &q, &DeOptions::precise(), None).unwrap();
        let (gains, vecs) = linalg::eigh(&state.blocks[0].params.gamma);
        let total = |nu: f64| gains.iter().map(|g| (nu - 1.0 / g).max(0.0)).sum::<f64>();
        let (mut lo, mut hi) = (0.0, p + gains.iter().map(|g| 1.0 / g).fold(0.0, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > p { hi = mid } else { lo = mid }
        }
        let levels: Vec<f64> = gains.iter().map(|g| (lo - 1.0 / g).max(0.0)).collect();
        q = CovarianceSet::new(1, vec![linalg::reconstruct(&vecs, &levels)]).unwrap();
    }
    de_ee(config, stats, &q, &DecodingOrder::identity(1, 1), &DeOptions::precise()).unwrap().rates[0]
}

#[test]
fn single_user_rate_matches_classical_capacity() {
    let omega = DMatrix::from_row_slice(4, 2, &[1.5, 0.2, 0.3, 0.9, 0.6, 0.1, 0.05, 0.7]);
    let stats = diagonal_stats(vec![omega]);
    let config = SystemConfig::uniform(1, 1, 4, 2, 1.0, 0.3, 2.0, 0.0, 0.1, 1.0);
    let r = ordering::single_user_rate(&config, &stats, &SarConstraints::none(1), 0, &tight()).unwrap();
    let oracle = classical_capacity(&config, &stats);
    assert!(rel(r, oracle) < 1e-4, "{r} vs {oracle}");
}

#[test]
fn four_times_stronger_user_goes_first() {
    let omega = DMatrix::from_row_slice(4, 2, &[0.5, 0.2, 0.3, 0.9, 0.6, 0.1, 0.05, 0.7]);
    let stats = diagonal_stats(vec![&omega * 4.0, omega.clone()]);
    let config = unit_config(2, 3, 4, 2, 1.0);
    let solver = SolverConfig::default();
    let (order, rates) = ordering::greedy_order(&config, &stats, &SarConstraints::none(2), &solver).unwrap();
    assert!(rates[0] > rates[1]);
    assert_eq!(order, DecodingOrder::user_major(&[0, 1], 3).unwrap());
    let swapped = stats.subset(&[1, 0]);
    let (order, _) = ordering::greedy_order(&config, &swapped, &SarConstraints::none(2), &solver).unwrap();
    assert_eq!(order.user_sequence(), vec![1, 0]);
}

#[test]
fn relabeling_users_permutes_the_greedy_order() {
    let rates = [0.3, 1.7, 0.9, 1.1];
    let perm = [2, 0, 3, 1];
    let relabeled: Vec<f64> = perm.iter().map(|&k| rates[k]).collect();
    let a = greedy_from_rates(&rates, 2).unwrap().user_sequence();
    let b = greedy_from_rates(&relabeled, 2).unwrap().user_sequence();
    let mapped: Vec<usize> = b.iter().map(|&i| perm[i]).collect();
    assert_eq!(a, mapped);
}

#[test]
fn exhaustive_search_counts() {
    let solver = SolverConfig::default();
    let config = unit_config(2, 1, 4, 2, 1.0);
    let stats = unit_stats(1, 4, 2, 2);
    let (res, _) = ordering::exhaustive_order(&config, &stats, &SarConstraints::none(2), &solver).unwrap();
    assert_eq!(res.evaluated, 2);

    let config = unit_config(1, 1, 4, 2, 1.0);
    let stats = unit_stats(1, 4, 1, 2);
    let (res, _) = ordering::exhaustive_order(&config, &stats, &SarConstraints::none(1), &solver).unwrap();
    assert_eq!(res.evaluated, 1);
    assert_eq!(res.order, DecodingOrder::identity(1, 1));
}

#[test]
fn exhaustive_dominates_greedy_with_small_loss() {
    let config = unit_config(2, 2, 6, 2, 2.0);
    let stats = unit_stats(21, 6, 2, 2);
    let cons = SarConstraints::reference(2, 2, 0.6).unwrap();
    let solver = SolverConfig::default();
    let best = ordering::solve(&config, &stats, &cons, &OrderingMethod::Exhaustive, &solver).unwrap();
    let greedy = ordering::solve(&config, &stats, &cons, &OrderingMethod::Greedy, &solver).unwrap();
    let (e, g) = (best.inner.ee_bits_per_joule, greedy.inner.ee_bits_per_joule);
    assert!(e >= g);
    assert!((e - g) / e <= 0.02);
}

#[test]
fn fixed_order_is_the_inner_solver() {
    let config = unit_config(2, 2, 6, 2, 2.0);
    let stats = unit_stats(8, 6, 2, 2);
    let cons = SarConstraints::reference(2, 2, 0.6).unwrap();
    let order = ordering::random_order(2, 2, 8);
    let solver = SolverConfig::default();
    let via = ordering::solve(&config, &stats, &cons, &OrderingMethod::Fixed(order.clone()), &solver).unwrap();
    let direct = solve_inner(&config, &stats, &order, &cons, &solver).unwrap();
    assert_eq!(via.inner.ee_bits_per_joule, direct.ee_bits_per_joule);
    assert_eq!(via.inner.covariances, direct.covariances);
}

#[test]
fn dead_network_solves_to_zero() {
    let config = unit_config(2, 2, 4, 2, 1.0);
    let stats = diagonal_stats(vec![DMatrix::zeros(4, 2), DMatrix::zeros(4, 2)]);
    let sol = ordering::solve(&config, &stats, &SarConstraints::none(2), &OrderingMethod::Greedy, &SolverConfig::default()).unwrap();
    assert_eq!(sol.inner.ee_bits_per_joule, 0.0);
    assert!(sol.inner.covariances.is_zero());
    assert_eq!(sol.ordering.single_user_rates, vec![0.0, 0.0]);
}
