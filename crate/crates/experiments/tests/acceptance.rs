//! End-to-end acceptance checks. Each criterion runs in isolation and
//! prints one PASS/FAIL line; the process fails if any criterion does.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsma_core::channel::{generate_stats, GeneratorParams};
use rsma_core::de::{de_ee, rate_minus, DeOptions};
use rsma_core::linalg::{self, c, CMat};
use rsma_core::model::{check_feasible, dbm_to_watts};
use rsma_core::optimizer::{initial_covariances, mm_gradients, solve_inner, water_fill, SolverConfig};
use rsma_core::ordering::random_order;
use rsma_core::{Block, ChannelStats, CovarianceSet, DecodingOrder, SarConstraint, SarConstraints, SystemConfig};
use rsma_experiments::output::{write_csv, RESULTS_CSV};
use rsma_experiments::runner::{
    compare_orders, compare_schemes, non_increasing, run_sweep, validate_de, OrderMethod, ResultRow, SOLVER_SLACK,
};
use rsma_experiments::{ExperimentConfig, Scheme, Sweep, SweepAxis};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_complex(n: usize, r: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(n, n, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

fn sweep(values: &[f64]) -> Sweep {
    Sweep { axis: SweepAxis::PMaxDbm, values: values.to_vec() }
}

fn ee(rows: &[ResultRow], value: f64, scheme: Scheme) -> Option<f64> {
    rows.iter().find(|r| r.sweep_value == value && r.scheme == scheme.name()).and_then(|r| r.ee_bits_per_joule)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn de_fidelity() -> Outcome {
    let config = ExperimentConfig { samples: 1000, ..Default::default() };
    let started = Instant::now();
    let report = validate_de(&config).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let failed: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.rel_error.is_none_or(|e| e > 0.03))
        .map(|r| format!("{} dBm: {} {}", r.sweep_value, fmt(r.rel_error), r.error))
        .collect();
    check(
        failed.is_empty() && secs <= 600.0,
        format!(
            "max error {:.3e} over {} points, {} samples, {secs:.0} s{}",
            report.max_error,
            report.rows.len(),
            report.samples,
            if failed.is_empty() { String::new() } else { format!("; over 3%: {}", failed.join(", ")) }
        ),
    )
}

fn solver_monotonicity() -> Outcome {
    let mut worst_mm = 0.0f64;
    let mut worst_eta = 0.0f64;
    let mut bad = Vec::new();
    for seed in 0..20u64 {
        let p_dbm = -10.0 + 2.0 * seed as f64;
        let config = SystemConfig::uniform(
            4, 2, 16, 4, 10e6, dbm_to_watts(-96.0), 5.0, dbm_to_watts(30.0), dbm_to_watts(40.0), dbm_to_watts(p_dbm),
        );
        let stats = generate_stats(&GeneratorParams { seed, ..Default::default() }, 16, &[4; 4]).unwrap();
        let cons = SarConstraints::reference(4, 4, 0.8).unwrap();
        let order = random_order(4, 2, seed);
        let sol = solve_inner(&config, &stats, &order, &cons, &SolverConfig::default()).map_err(|e| e.to_string())?;
        let drop = |w: &[f64]| (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE);
        for w in sol.trace.mm_objective.windows(2) {
            worst_mm = worst_mm.max(drop(w));
        }
        for etas in &sol.trace.eta {
            for w in etas.windows(2) {
                worst_eta = worst_eta.max(drop(w));
            }
        }
        if worst_mm > 1e-8 || worst_eta > 1e-8 {
            bad.push(seed);
        }
    }
    check(
        bad.is_empty(),
        format!("20 instances, largest relative drop: MM {worst_mm:.1e}, eta {worst_eta:.1e}; failing seeds {bad:?}"),
    )
}

fn ln_det(a: &CMat) -> f64 {
    a.clone().determinant().norm().ln()
}

fn wf_objective(s: &CMat, g: &CMat, q: &CMat) -> f64 {
    let n = q.nrows();
    ln_det(&(CMat::identity(n, n) + g * q)) - (s * q).trace().re
}

/// Projected gradient ascent over the PSD cone.
fn wf_oracle(s: &CMat, g: &CMat, start: CMat) -> f64 {
    let n = s.nrows();
    let mut q = linalg::psd_project(&start);
    let mut f = wf_objective(s, g, &q);
    let mut step = 1.0;
    for _ in 0..50_000 {
        let inv = (CMat::identity(n, n) + g * &q).try_inverse().unwrap();
        let grad = linalg::hermitize(&(inv * g)) - s;
        step *= 2.0;
        loop {
            let trial = linalg::psd_project(&(&q + &grad * c(step)));
            let ft = wf_objective(s, g, &trial);
            let d = &trial - &q;
            if ft >= f + 1e-4 * (grad.adjoint() * &d).trace().re {
                let moved = linalg::frobenius_sq(&d).sqrt();
                q = trial;
                f = ft;
                if moved < 1e-13 {
                    return f;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return f;
            }
        }
    }
    f
}

fn water_filling() -> Outcome {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_complex(4, &mut r);
        let s = &a * a.adjoint() + CMat::identity(4, 4) * c(r.random_range(0.01..1.0));
        let b = random_complex(4, &mut r);
        let g = &b * b.adjoint() * c(r.random_range(0.5..10.0));
        let closed = wf_objective(&s, &g, &water_fill(&s, &g));
        let start = {
            let x = random_complex(4, &mut r);
            &x * x.adjoint()
        };
        worst = worst.max((closed - wf_oracle(&s, &g, start)).abs());
    }
    check(worst <= 1e-6, format!("50 pairs, largest objective gap {worst:.2e}"))
}

fn hermitian_basis(n: usize) -> Vec<CMat> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    for i in 0..n {
        let mut e = CMat::zeros(n, n);
        e[(i, i)] = c(1.0);
        out.push(e);
        for j in i + 1..n {
            let mut e = CMat::zeros(n, n);
            e[(i, j)] = c(r);
            e[(j, i)] = c(r);
            out.push(e);
            let mut e = CMat::zeros(n, n);
            e[(i, j)] = Complex64::new(0.0, r);
            e[(j, i)] = Complex64::new(0.0, -r);
            out.push(e);
        }
    }
    out
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    (a.adjoint() * b).trace().re
}

/// Projection onto `{sum_i <a_i, y_i> <= b}`.
fn halfspace(y: &[CMat], a: &[CMat], b: f64) -> Vec<CMat> {
    let v: f64 = y.iter().zip(a).map(|(y, a)| inner(a, y)).sum();
    if v <= b {
        return y.to_vec();
    }
    let nn: f64 = a.iter().map(linalg::frobenius_sq).sum();
    let t = (v - b) / nn;
    y.iter().zip(a).map(|(y, a)| y - a * c(t)).collect()
}

/// Dykstra's alternating projection onto one user's feasible set.
fn project_user(blocks: &[CMat], p: f64, sar: &[SarConstraint]) -> Vec<CMat> {
    let n = blocks[0].nrows();
    let k = blocks.len();
    let sets = 2 + sar.len();
    let mut x = blocks.to_vec();
    let mut incr = vec![vec![CMat::zeros(n, n); k]; sets];
    for _ in 0..2000 {
        let prev = x.clone();
        for (s, inc) in incr.iter_mut().enumerate() {
            let y: Vec<CMat> = x.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
            let proj = match s {
                0 => y.iter().map(linalg::psd_project).collect(),
                1 => halfspace(&y, &vec![CMat::identity(n, n); k], p),
                _ => halfspace(&y, &vec![sar[s - 2].matrix().clone(); k], sar[s - 2].budget),
            };
            *inc = y.iter().zip(&proj).map(|(a, b)| a - b).collect();
            x = proj;
        }
        let d: f64 = x.iter().zip(&prev).map(|(a, b)| linalg::frobenius_sq(&(a - b))).sum();
        if d < 1e-30 {
            break;
        }
    }
    x
}

fn project(q: &[CMat], config: &SystemConfig, cons: &SarConstraints) -> Vec<CMat> {
    let l = config.num_layers;
    (0..config.num_users)
        .flat_map(|k| project_user(&q[k * l..(k + 1) * l], config.power_budget[k], cons.user(k)))
        .collect()
}

fn ee_of(q: &[CMat], config: &SystemConfig, stats: &ChannelStats, order: &DecodingOrder) -> f64 {
    let set = CovarianceSet::new_unchecked(config.num_layers, q.to_vec()).unwrap();
    de_ee(config, stats, &set, order, &DeOptions { tolerance: 1e-24, max_iters: 2000 }).unwrap().ee_bits_per_joule
}

/// Projected gradient ascent on the DE energy efficiency with
/// finite-difference gradients.
fn ee_oracle(config: &SystemConfig, stats: &ChannelStats, order: &DecodingOrder, cons: &SarConstraints) -> f64 {
    let start = initial_covariances(config, cons).into_blocks();
    let n = start[0].nrows();
    let basis = hermitian_basis(n);
    let mut q = project(&start, config, cons);
    let mut f = ee_of(&q, config, stats, order);
    let h = 1e-7 * config.power_budget[0];
    let mut step = 1e-9;
    for _ in 0..3000 {
        let mut g = vec![CMat::zeros(n, n); q.len()];
        for s in 0..q.len() {
            for e in &basis {
                let mut qp = q.clone();
                qp[s] += e * c(h);
                let mut qm = q.clone();
                qm[s] -= e * c(h);
                let d = (ee_of(&qp, config, stats, order) - ee_of(&qm, config, stats, order)) / (2.0 * h);
                g[s] += e * c(d);
            }
        }
        step *= 4.0;
        let mut accepted = false;
        while step > 1e-30 {
            let trial: Vec<CMat> = q.iter().zip(&g).map(|(a, d)| a + d * c(step)).collect();
            let trial = project(&trial, config, cons);
            let ft = ee_of(&trial, config, stats, order);
            let lin: f64 = g.iter().zip(trial.iter().zip(&q)).map(|(g, (t, a))| inner(g, &(t - a))).sum();
            if ft >= f + 1e-4 * lin && ft >= f {
                let moved: f64 = trial.iter().zip(&q).map(|(t, a)| linalg::frobenius_sq(&(t - a))).sum();
                let gain = ft - f;
                q = trial;
                f = ft;
                accepted = true;
                if gain <= 1e-12 * f && moved.sqrt() < 1e-12 {
                    return f;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return f;
        }
    }
    f
}

fn small_system(p_dbm: f64) -> SystemConfig {
    SystemConfig::uniform(2, 2, 8, 2, 10e6, dbm_to_watts(-96.0), 5.0, dbm_to_watts(30.0), dbm_to_watts(40.0), dbm_to_watts(p_dbm))
}

fn end_to_end_oracle() -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut worst_violation = 0.0f64;
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        for p_dbm in [10.0, 30.0] {
            let config = small_system(p_dbm);
            let stats = generate_stats(&GeneratorParams { seed, ..Default::default() }, 8, &[2, 2]).unwrap();
            let cons = SarConstraints::reference(2, 2, 0.8).unwrap();
            let order = DecodingOrder::identity(2, 2);
            let sol = solve_inner(&config, &stats, &order, &cons, &SolverConfig::default()).map_err(|e| e.to_string())?;
            let oracle = ee_oracle(&config, &stats, &order, &cons);
            let gap = (sol.ee_bits_per_joule - oracle).abs() / oracle;
            let rep = check_feasible(&config, &cons, &sol.covariances);
            let violation = (-rep.min_relative_power_slack(&config)).max(-rep.min_relative_sar_slack(&cons)).max(0.0);
            worst_gap = worst_gap.max(gap);
            worst_violation = worst_violation.max(violation);
            lines.push(format!("seed {seed} {p_dbm} dBm {gap:.1e}"));
        }
    }
    check(
        worst_gap <= 1e-3 && worst_violation <= 1e-6,
        format!("largest gap {worst_gap:.2e}, largest violation {worst_violation:.1e} ({})", lines.join(", ")),
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(5);
    for seed in 0..5u64 {
        let config = SystemConfig::uniform(3, 2, 8, 2, 1.0, 1.0, 2.0, 0.1, 0.5, 2.0);
        let stats = generate_stats(&GeneratorParams { seed, pathloss_db: 0.0, ..Default::default() }, 8, &[2; 3]).unwrap();
        let blocks: Vec<CMat> = (0..6)
            .map(|_| {
                let a = random_complex(2, &mut r);
                &a * a.adjoint() * c(0.3)
            })
            .collect();
        let q = CovarianceSet::new(2, blocks).unwrap();
        let order = random_order(3, 2, seed);
        let grads = mm_gradients(&config, &stats, &q, &order).unwrap();
        let h = 1e-6;
        for t in 0..6 {
            let target = Block::from_index(t, 2);
            for (s, delta) in &grads.deltas[t] {
                let scale = linalg::max_abs(delta);
                for i in 0..2 {
                    for j in i..2 {
                        let mut dirs = vec![(Complex64::new(1.0, 0.0), 2.0 * delta[(j, i)].re)];
                        if i == j {
                            dirs[0].1 = delta[(i, i)].re;
                        } else {
                            dirs.push((Complex64::new(0.0, 1.0), -2.0 * delta[(j, i)].im));
                        }
                        for (unit, analytic) in dirs {
                            let mut e = CMat::zeros(2, 2);
                            e[(i, j)] = unit * h;
                            e[(j, i)] = unit.conj() * h;
                            let mut plus = q.blocks().to_vec();
                            plus[*s] += &e;
                            let mut minus = q.blocks().to_vec();
                            minus[*s] -= &e;
                            let f = |b: Vec<CMat>| {
                                let set = CovarianceSet::new_unchecked(2, b).unwrap();
                                rate_minus(&config, &stats, &set, &order, target).unwrap()
                            };
                            let fd = (f(plus) - f(minus)) / (2.0 * h);
                            let err = (fd - analytic).abs() / analytic.abs().max(1e-3 * scale);
                            worst = worst.max(err);
                        }
                    }
                }
            }
        }
    }
    check(worst <= 1e-5, format!("largest entrywise relative error {worst:.2e}"))
}

fn ordering_chain() -> Outcome {
    let mut config = ExperimentConfig::default();
    config.system.num_users = 2;
    let report = compare_orders(&config).map_err(|e| e.to_string())?;
    let get = |v: f64, m: OrderMethod| {
        report.rows.iter().find(|r| r.sweep_value == v && r.method == m).and_then(|r| r.ee_bits_per_joule)
    };
    let mut broken = Vec::new();
    for (i, &v) in config.sweep.values.iter().enumerate() {
        if !report.chain[i] {
            let (e, g, r) = (get(v, OrderMethod::Exhaustive), get(v, OrderMethod::Greedy), get(v, OrderMethod::Reverse));
            let rel = match (g, r) {
                (Some(g), Some(r)) => format!("{:+.1e}", (g - r) / r),
                _ => "-".into(),
            };
            broken.push(format!("{v} dBm (exhaustive {}, greedy {}, reverse {}, greedy vs reverse {rel})", fmt(e), fmt(g), fmt(r)));
        }
    }
    let max_gap = report.greedy_gap.iter().map(|g| g.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    check(
        broken.is_empty() && max_gap <= 0.02,
        format!(
            "greedy gap at most {max_gap:.2e}; chain broken at {}",
            if broken.is_empty() { "no point".into() } else { broken.join("; ") }
        ),
    )
}

fn scheme_ordering() -> Outcome {
    let config = ExperimentConfig { sweep: sweep(&[20.0, 25.0, 30.0]), ..Default::default() };
    let report = compare_schemes(&config).map_err(|e| e.to_string())?;
    let access_ok = report.access_chain.iter().all(|&b| b);

    let mut layer_detail = Vec::new();
    let mut layers_ok = true;
    for p in [20.0, 30.0] {
        let mut layered = ExperimentConfig {
            sweep: Sweep { axis: SweepAxis::Layers, values: vec![1.0, 2.0, 4.0] },
            ..Default::default()
        };
        layered.system.p_max_dbm = p;
        let rows = run_sweep(&layered).map_err(|e| e.to_string())?;
        let ees: Vec<Option<f64>> = rows.iter().map(|r| r.ee_bits_per_joule).collect();
        let mut reversed = ees.clone();
        reversed.reverse();
        layers_ok &= non_increasing(&reversed);
        layer_detail.push(format!("{p} dBm L=1,2,4: {}", ees.iter().map(|e| fmt(*e)).collect::<Vec<_>>().join(" ")));
    }
    check(
        access_ok && layers_ok,
        format!("scheme chain per point {:?}; {}", report.access_chain, layer_detail.join("; ")),
    )
}

fn sar_regimes() -> Outcome {
    let run = |p: f64| -> Result<Vec<Option<f64>>, String> {
        let mut config = ExperimentConfig {
            sweep: Sweep { axis: SweepAxis::SarBudget, values: vec![0.4, 0.8, 1.6] },
            ..Default::default()
        };
        config.system.p_max_dbm = p;
        Ok(run_sweep(&config).map_err(|e| e.to_string())?.iter().map(|r| r.ee_bits_per_joule).collect())
    };
    let low = run(0.0)?;
    let high = run(30.0)?;
    let invariant = low.iter().all(|e| match (e, low[0]) {
        (Some(a), Some(b)) => (a - b).abs() <= SOLVER_SLACK * b,
        _ => false,
    });
    let increasing = high.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => b > a * (1.0 + SOLVER_SLACK),
        _ => false,
    });
    let show = |v: &[Option<f64>]| v.iter().map(|e| fmt(*e)).collect::<Vec<_>>().join(" ");
    check(
        invariant && increasing,
        format!("D = 0.4, 0.8, 1.6 W/kg; 0 dBm: {}; 30 dBm: {}", show(&low), show(&high)),
    )
}

fn backoff_dominance() -> Outcome {
    let config = ExperimentConfig { schemes: Scheme::BACKOFF.to_vec(), ..Default::default() };
    let rows = run_sweep(&config).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut equal_points = 0;
    for &v in &config.sweep.values {
        let chain: Vec<Option<f64>> = Scheme::BACKOFF.iter().map(|&s| ee(&rows, v, s)).collect();
        if !non_increasing(&chain) {
            problems.push(format!("{v} dBm chain {:?}", chain));
        }
        let proposed = chain[0].unwrap_or(f64::NAN);
        for (i, scheme) in [Scheme::AdaptiveBackoff, Scheme::WorstCaseBackoff].iter().enumerate() {
            let row = rows.iter().find(|r| r.sweep_value == v && r.scheme == scheme.name()).unwrap();
            let unit = row.alpha.split(';').all(|a| a.parse::<f64>() == Ok(1.0));
            if unit {
                equal_points += 1;
                let e = chain[i + 1].unwrap_or(f64::NAN);
                if e.is_nan() || (e - proposed).abs() > SOLVER_SLACK * proposed {
                    problems.push(format!("{v} dBm {} has alpha 1 but EE {e:.6e} vs {proposed:.6e}", scheme.name()));
                }
            }
        }
    }
    check(
        problems.is_empty() && equal_points > 0,
        format!("{} points, {equal_points} backoff rows with alpha = 1; {}", config.sweep.values.len(), if problems.is_empty() { "no violations".into() } else { problems.join("; ") }),
    )
}

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        sweep: sweep(&[-10.0, 10.0, 30.0]),
        schemes: vec![Scheme::Rsma, Scheme::Noma, Scheme::AdaptiveBackoff],
        ..Default::default()
    };
    let mut files = Vec::new();
    let mut dirs = Vec::new();
    for workers in [1, 4] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let rows = run_sweep(&ExperimentConfig { workers: Some(workers), ..config.clone() }).map_err(|e| e.to_string())?;
        let path = dir.path().join(RESULTS_CSV);
        write_csv(&path, &rows, ResultRow::HEADER).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        dirs.push(dir);
    }
    check(files[0] == files[1], format!("two runs (1 and 4 workers), {} bytes each", files[0].len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("DE fidelity", de_fidelity),
        ("solver monotonicity", solver_monotonicity),
        ("water-filling correctness", water_filling),
        ("end-to-end oracle", end_to_end_oracle),
        ("gradient check", gradient_check),
        ("ordering chain", ordering_chain),
        ("scheme ordering", scheme_ordering),
        ("SAR regimes", sar_regimes),
        ("backoff dominance", backoff_dominance),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1} s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1} s] {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
