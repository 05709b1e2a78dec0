mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rsma_core::linalg::{c, CMat};
use rsma_core::model::dbm_to_watts;
use rsma_core::montecarlo::{model_rates_mc, sample_channel, Estimator};
use rsma_core::rates::RateModel;
use rsma_core::{Block, CovarianceSet, DecodingOrder, SystemConfig};

/// `E{log(1 + a x)}` for `x ~ Exp(1)` by composite Simpson on `x = t / (1 - t)`.
fn exp_log_quadrature(a: f64) -> f64 {
    let f = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let x = t / (1.0 - t);
        (-x).exp() * (1.0 + a * x).ln() / ((1.0 - t) * (1.0 - t))
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn quadrature_oracle_is_sound() {
    // E{log(1 + x)} = e * E1(1) = 0.596347362323194...
    assert!((exp_log_quadrature(1.0) - 0.596_347_362_323_194).abs() < 1e-9);
}

#[test]
fn unit_coupling_sample_variance() {
    let stats = diagonal_stats(vec![DMatrix::from_element(2, 2, 1.0)]);
    let n = 100_000;
    let mut sums = [[0.0f64; 2]; 2];
    let mut means = [[num_complex::Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..n {
        let h = &sample_channel(&stats, 17, i).beam[0];
        for a in 0..2 {
            for b in 0..2 {
                sums[a][b] += h[(a, b)].norm_sqr();
                means[a][b] += h[(a, b)];
            }
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            let mean = means[a][b] / n as f64;
            let var = sums[a][b] / n as f64 - mean.norm_sqr();
            assert!((0.95..=1.05).contains(&var), "variance {var}");
        }
    }
}

fn single_link(q: f64, sigma2: f64) -> (SystemConfig, rsma_core::ChannelStats, CovarianceSet, RateModel) {
    let config = SystemConfig::uniform(1, 1, 1, 1, 1.0, sigma2, 2.0, 0.0, 0.0, 10.0);
    let stats = diagonal_stats(vec![DMatrix::from_element(1, 1, 1.0)]);
    let set = CovarianceSet::new(1, vec![CMat::identity(1, 1) * c(q)]).unwrap();
    let model = RateModel::sic(&config, &DecodingOrder::identity(1, 1)).unwrap();
    (config, stats, set, model)
}

#[test]
fn scalar_link_matches_quadrature() {
    let (_, stats, q, model) = single_link(2.0, 0.5);
    let mc = model_rates_mc(&stats, &model, &q, 100_000, 3, Estimator::Exact)[0];
    let oracle = exp_log_quadrature(2.0 / 0.5);
    assert!(rel(mc, oracle) < 0.01, "mc {mc} oracle {oracle}");
}

#[test]
fn estimators_coincide_without_interference_at_one_antenna() {
    let (_, stats, q, model) = single_link(1.3, 0.7);
    for seed in 0..50 {
        let e = model_rates_mc(&stats, &model, &q, 1, seed, Estimator::Exact);
        let h = model_rates_mc(&stats, &model, &q, 1, seed, Estimator::Hardened);
        assert_eq!(e, h);
    }
}

#[test]
fn exact_and_hardened_agree_at_low_snr_with_many_antennas() {
    let config = SystemConfig::reference(dbm_to_watts(0.0));
    let stats = rsma_core::channel::generate_stats(
        &rsma_core::channel::GeneratorParams { seed: 7, ..Default::default() },
        64,
        &[4; 4],
    )
    .unwrap();
    let q = random_covariances(&config, 1.0, &mut rng(1));
    let model = RateModel::sic(&config, &DecodingOrder::identity(4, 2)).unwrap();
    let exact: f64 = model_rates_mc(&stats, &model, &q, 500, 1, Estimator::Exact).iter().sum();
    let hard: f64 = model_rates_mc(&stats, &model, &q, 500, 1, Estimator::Hardened).iter().sum();
    assert!(rel(hard, exact) < 0.03, "exact {exact} hardened {hard}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rates_grow_with_the_target_power(seed in 0u64..500, t in 0usize..4, scale in 1.0f64..4.0) {
        let config = unit_config(2, 2, 4, 2, 1.0);
        let stats = unit_stats(seed, 4, 2, 2);
        let q = random_covariances(&config, 0.7, &mut rng(seed));
        let order = rsma_core::ordering::random_order(2, 2, seed);
        let model = RateModel::sic(&config, &order).unwrap();
        let mut blocks = q.blocks().to_vec();
        blocks[t] *= c(scale);
        let bigger = CovarianceSet::new(2, blocks).unwrap();
        for est in [Estimator::Exact, Estimator::Hardened] {
            let a = model_rates_mc(&stats, &model, &q, 50, seed, est);
            let b = model_rates_mc(&stats, &model, &bigger, 50, seed, est);
            prop_assert!(a.iter().all(|r| *r >= 0.0));
            prop_assert!(b[t] >= a[t] - 1e-12);
        }
    }

    #[test]
    fn layer_relabeling_keeps_the_exact_sum(seed in 0u64..500, user in 0usize..2) {
        let config = unit_config(2, 2, 4, 2, 1.0);
        let stats = unit_stats(seed, 4, 2, 2);
        let q = random_covariances(&config, 0.7, &mut rng(seed));
        let order = rsma_core::ordering::random_order(2, 2, seed);
        let mut blocks = q.blocks().to_vec();
        blocks.swap(2 * user, 2 * user + 1);
        let swapped_q = CovarianceSet::new(2, blocks).unwrap();
        let seq: Vec<Block> = order
            .sequence()
            .iter()
            .map(|b| if b.user == user { Block::new(user, 1 - b.layer) } else { *b })
            .collect();
        let swapped_order = DecodingOrder::from_sequence(2, 2, seq).unwrap();
        let a: f64 = model_rates_mc(&stats, &RateModel::sic(&config, &order).unwrap(), &q, 40, seed, Estimator::Exact).iter().sum();
        let b: f64 = model_rates_mc(&stats, &RateModel::sic(&config, &swapped_order).unwrap(), &swapped_q, 40, seed, Estimator::Exact).iter().sum();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }
}
