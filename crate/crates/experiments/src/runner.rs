//! Sweep drivers. Every runner evaluates its sweep points in parallel and
//! returns rows in sweep order, so output files only depend on the config.

use rayon::prelude::*;
use rsma_core::baselines::{self, BaselineScheme};
use rsma_core::channel::{complex_to_json, ComplexMatrixJson};
use rsma_core::de::{self, DeOptions};
use rsma_core::model::{self, FeasibilityReport};
use rsma_core::montecarlo::{self, Estimator};
use rsma_core::optimizer::{solve_inner, IterationCounts, TraceRow};
use rsma_core::ordering::{self, OrderingMethod, OrderingResult, Solution};
use rsma_core::{ChannelStats, DecodingOrder, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OrderingChoice, Point, Scheme};
use crate::{Error, Result};

/// Relative slack allowed when comparing solver outputs.
pub const SOLVER_SLACK: f64 = 1e-6;

/// Runs `f` on a pool with `workers` threads (the global pool when `None`).
pub fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `"user.layer"` labels in decoding order.
pub fn order_label(order: &DecodingOrder) -> String {
    order.sequence().iter().map(|b| format!("{}.{}", b.user, b.layer)).collect::<Vec<_>>().join(" ")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";")
}

fn ordering_method(config: &ExperimentConfig, system: &SystemConfig) -> OrderingMethod {
    match config.ordering {
        OrderingChoice::Greedy => OrderingMethod::Greedy,
        OrderingChoice::Exhaustive => OrderingMethod::Exhaustive,
        OrderingChoice::Fixed => OrderingMethod::Fixed(
            config
                .fixed_order
                .clone()
                .unwrap_or_else(|| DecodingOrder::identity(system.num_users, system.num_layers)),
        ),
    }
}

fn points(config: &ExperimentConfig) -> Result<Vec<Point>> {
    config.sweep.values.iter().map(|&v| config.point(v)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub ee_bits_per_joule: Option<f64>,
    pub sum_rate_bps: Option<f64>,
    pub power_w: Option<f64>,
    /// Smallest power slack relative to its budget.
    pub min_power_slack: Option<f64>,
    /// Smallest SAR slack relative to its budget (empty without SAR limits).
    pub min_sar_slack: Option<f64>,
    /// Relative power slack per user, `;`-separated.
    pub power_slacks: String,
    /// Relative SAR slack per user and region, `;`-separated.
    pub sar_slacks: String,
    pub feasible: Option<bool>,
    pub ao_iters: Option<usize>,
    pub dual_iters: Option<usize>,
    pub mm_iters: Option<usize>,
    pub dinkelbach_iters: Option<usize>,
    pub converged: Option<bool>,
    pub order: String,
    /// Per-user backoff factors, `;`-separated.
    pub alpha: String,
    pub error: String,
}

impl ResultRow {
    pub const HEADER: &'static [&'static str] = &[
        "sweep_value",
        "scheme",
        "ee_bits_per_joule",
        "sum_rate_bps",
        "power_w",
        "min_power_slack",
        "min_sar_slack",
        "power_slacks",
        "sar_slacks",
        "feasible",
        "ao_iters",
        "dual_iters",
        "mm_iters",
        "dinkelbach_iters",
        "converged",
        "order",
        "alpha",
        "error",
    ];

    fn failed(value: f64, scheme: Scheme, err: &dyn std::fmt::Display) -> Self {
        Self {
            sweep_value: value,
            scheme: scheme.name().into(),
            ee_bits_per_joule: None,
            sum_rate_bps: None,
            power_w: None,
            min_power_slack: None,
            min_sar_slack: None,
            power_slacks: String::new(),
            sar_slacks: String::new(),
            feasible: None,
            ao_iters: None,
            dual_iters: None,
            mm_iters: None,
            dinkelbach_iters: None,
            converged: None,
            order: String::new(),
            alpha: String::new(),
            error: err.to_string(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn solved(
        point: &Point,
        scheme: Scheme,
        system: &SystemConfig,
        ee: f64,
        sum_rate: f64,
        power: f64,
        feasibility: &FeasibilityReport,
        iters: IterationCounts,
        converged: bool,
    ) -> Self {
        let cons = &point.constraints;
        let sar_rel = feasibility
            .sar_slack
            .iter()
            .zip(cons.iter())
            .flat_map(|(ss, cs)| ss.iter().zip(cs).map(|(s, c)| s / c.budget).collect::<Vec<_>>());
        let min_sar = feasibility.min_relative_sar_slack(cons);
        Self {
            sweep_value: point.value,
            scheme: scheme.name().into(),
            ee_bits_per_joule: Some(ee),
            sum_rate_bps: Some(sum_rate),
            power_w: Some(power),
            min_power_slack: Some(feasibility.min_relative_power_slack(system)),
            min_sar_slack: min_sar.is_finite().then_some(min_sar),
            power_slacks: join(feasibility.power_slack.iter().zip(&system.power_budget).map(|(s, p)| s / p)),
            sar_slacks: join(sar_rel),
            feasible: Some(feasibility.feasible),
            ao_iters: Some(iters.ao),
            dual_iters: Some(iters.dual),
            mm_iters: Some(iters.mm),
            dinkelbach_iters: Some(iters.dinkelbach),
            converged: Some(converged),
            order: String::new(),
            alpha: String::new(),
            error: String::new(),
        }
    }
}

fn rsma_row(point: &Point, sol: &Solution) -> ResultRow {
    let inner = &sol.inner;
    let mut row = ResultRow::solved(
        point,
        Scheme::Rsma,
        &point.system,
        inner.ee_bits_per_joule,
        inner.sum_rate_bps,
        inner.power,
        &inner.feasibility,
        inner.iterations,
        inner.converged,
    );
    row.order = order_label(&sol.ordering.order);
    row
}

fn baseline_row(
    point: &Point,
    scheme: Scheme,
    which: BaselineScheme,
    stats: &ChannelStats,
    config: &ExperimentConfig,
) -> Result<ResultRow> {
    let sol = baselines::solve_baseline(which, &point.system, stats, &point.constraints, &config.solver)?;
    let inner = &sol.inner;
    let mut row = ResultRow::solved(
        point,
        scheme,
        &point.system,
        inner.ee_bits_per_joule,
        inner.sum_rate_bps,
        inner.power,
        &inner.feasibility,
        inner.iterations,
        inner.converged,
    );
    if let Some(users) = &sol.user_order {
        row.order = users.iter().map(|u| format!("{u}.0")).collect::<Vec<_>>().join(" ");
    }
    Ok(row)
}

fn backoff_row(point: &Point, scheme: Scheme, stats: &ChannelStats, order: &DecodingOrder, config: &ExperimentConfig) -> Result<ResultRow> {
    let (system, cons) = (&point.system, &point.constraints);
    let sol = match scheme {
        Scheme::AdaptiveBackoff => baselines::adaptive_backoff(system, stats, cons, order, &config.solver)?,
        _ => baselines::worst_case_backoff(system, stats, cons, order, &config.solver)?,
    };
    let feasibility = model::check_feasible(system, cons, &sol.covariances);
    let power = model::power_consumption(system, &sol.covariances);
    let mut row = ResultRow::solved(
        point,
        scheme,
        system,
        sol.ee_bits_per_joule,
        sol.sum_rate_bps,
        power,
        &feasibility,
        sol.unconstrained.iterations,
        sol.unconstrained.converged,
    );
    row.order = order_label(order);
    row.alpha = join(sol.alpha.iter().copied());
    Ok(row)
}

fn sweep_point(config: &ExperimentConfig, stats: &ChannelStats, point: &Point, schemes: &[Scheme]) -> Vec<ResultRow> {
    let needs_order = schemes
        .iter()
        .any(|s| matches!(s, Scheme::Rsma | Scheme::AdaptiveBackoff | Scheme::WorstCaseBackoff));
    let proposed = needs_order.then(|| {
        let method = ordering_method(config, &point.system);
        ordering::solve(&point.system, stats, &point.constraints, &method, &config.solver)
    });
    schemes
        .par_iter()
        .map(|&scheme| {
            let row = match (scheme, &proposed) {
                (Scheme::Rsma, Some(Ok(sol))) => Ok(rsma_row(point, sol)),
                (Scheme::AdaptiveBackoff | Scheme::WorstCaseBackoff, Some(Ok(sol))) => {
                    backoff_row(point, scheme, stats, &sol.ordering.order, config)
                }
                (Scheme::Rsma | Scheme::AdaptiveBackoff | Scheme::WorstCaseBackoff, Some(Err(e))) => {
                    Err(Error::Config(format!("decoding order: {e}")))
                }
                (Scheme::Noma, _) => baseline_row(point, scheme, BaselineScheme::Noma, stats, config),
                (Scheme::Sdma, _) => baseline_row(point, scheme, BaselineScheme::Sdma, stats, config),
                (Scheme::Fdma, _) => baseline_row(point, scheme, BaselineScheme::Fdma, stats, config),
                (Scheme::Tdma, _) => baseline_row(point, scheme, BaselineScheme::Tdma, stats, config),
                _ => unreachable!("order computed for every scheme that needs one"),
            };
            row.unwrap_or_else(|e| ResultRow::failed(point.value, scheme, &e))
        })
        .collect()
}

fn sorted_schemes(schemes: &[Scheme]) -> Vec<Scheme> {
    let mut s = schemes.to_vec();
    s.sort();
    s.dedup();
    s
}

/// One row per (sweep value, scheme), sorted by sweep value then scheme.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let stats = config.stats()?;
    let points = points(config)?;
    let schemes = sorted_schemes(&config.schemes);
    with_pool(config.workers, || {
        let mut rows: Vec<ResultRow> = points
            .par_iter()
            .map(|p| sweep_point(config, &stats, p, &schemes))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        rows.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value));
        rows
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeReport {
    pub rows: Vec<ResultRow>,
    /// Per sweep point: rsma >= noma >= sdma >= fdma >= tdma.
    pub access_chain: Vec<bool>,
    /// Per sweep point: rsma >= adaptive backoff >= worst-case backoff.
    pub backoff_chain: Vec<bool>,
}

fn ee_of(rows: &[ResultRow], value: f64, scheme: Scheme) -> Option<f64> {
    rows.iter()
        .find(|r| r.sweep_value == value && r.scheme == scheme.name())
        .and_then(|r| r.ee_bits_per_joule)
}

/// `values[i] >= values[i + 1]` for every i, up to [`SOLVER_SLACK`].
pub fn non_increasing(values: &[Option<f64>]) -> bool {
    values.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => a >= b - SOLVER_SLACK * a.abs().max(b.abs()),
        _ => false,
    })
}

/// Runs every scheme and checks the expected EE rankings.
pub fn compare_schemes(config: &ExperimentConfig) -> Result<SchemeReport> {
    let mut all = config.clone();
    all.schemes = Scheme::MULTIPLE_ACCESS.iter().chain(&Scheme::BACKOFF).copied().collect();
    let rows = run_sweep(&all)?;
    let chain = |schemes: &[Scheme]| -> Vec<bool> {
        config
            .sweep
            .values
            .iter()
            .map(|&v| non_increasing(&schemes.iter().map(|&s| ee_of(&rows, v, s)).collect::<Vec<_>>()))
            .collect()
    };
    let access_chain = chain(&Scheme::MULTIPLE_ACCESS);
    let backoff_chain = chain(&Scheme::BACKOFF);
    Ok(SchemeReport { rows, access_chain, backoff_chain })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeRow {
    pub sweep_value: f64,
    pub de_ee: Option<f64>,
    /// Sample mean of the hardened rate.
    pub mc_ee: Option<f64>,
    pub rel_error: Option<f64>,
    /// Sample mean of the per-realization rate.
    pub mc_exact_ee: Option<f64>,
    pub rel_error_exact: Option<f64>,
    pub order: String,
    pub error: String,
}

impl DeRow {
    pub const HEADER: &'static [&'static str] = &[
        "sweep_value",
        "de_ee",
        "mc_ee",
        "rel_error",
        "mc_exact_ee",
        "rel_error_exact",
        "order",
        "error",
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeReport {
    pub rows: Vec<DeRow>,
    pub samples: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub max_error_exact: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Pass threshold on the relative DE error: the approximation is
/// asymptotic in the antenna count, so small arrays get a looser bound.
pub fn de_threshold(bs_antennas: usize) -> f64 {
    if bs_antennas >= 32 {
        0.03
    } else {
        0.10
    }
}

fn relative_error(approx: f64, reference: f64) -> f64 {
    if approx == 0.0 && reference == 0.0 {
        0.0
    } else {
        (approx - reference).abs() / reference.abs()
    }
}

fn validate_point(config: &ExperimentConfig, stats: &ChannelStats, point: &Point) -> Result<DeRow> {
    let method = ordering_method(config, &point.system);
    let sol = ordering::solve(&point.system, stats, &point.constraints, &method, &config.solver)?;
    let (q, order) = (&sol.inner.covariances, &sol.ordering.order);
    let de = de::de_ee(&point.system, stats, q, order, &DeOptions::default())?.ee_bits_per_joule;
    let mc = |est| montecarlo::ee_mc(&point.system, stats, q, order, config.samples, config.seed, est);
    let hardened = mc(Estimator::Hardened)?.ee_bits_per_joule;
    let exact = mc(Estimator::Exact)?.ee_bits_per_joule;
    Ok(DeRow {
        sweep_value: point.value,
        de_ee: Some(de),
        mc_ee: Some(hardened),
        rel_error: Some(relative_error(de, hardened)),
        mc_exact_ee: Some(exact),
        rel_error_exact: Some(relative_error(de, exact)),
        order: order_label(order),
        error: String::new(),
    })
}

/// Compares the DE energy efficiency of the proposed design with its
/// Monte-Carlo estimate at every sweep point.
pub fn validate_de(config: &ExperimentConfig) -> Result<DeReport> {
    config.validate()?;
    if config.samples < 100 {
        return Err(Error::Config("validation needs at least 100 samples".into()));
    }
    let stats = config.stats()?;
    let points = points(config)?;
    let rows: Vec<DeRow> = with_pool(config.workers, || {
        points
            .par_iter()
            .map(|p| {
                validate_point(config, &stats, p).unwrap_or_else(|e| DeRow {
                    sweep_value: p.value,
                    de_ee: None,
                    mc_ee: None,
                    rel_error: None,
                    mc_exact_ee: None,
                    rel_error_exact: None,
                    order: String::new(),
                    error: e.to_string(),
                })
            })
            .collect()
    })?;
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.rel_error).collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let mean_error = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    let max_error_exact = rows.iter().filter_map(|r| r.rel_error_exact).fold(0.0, f64::max);
    let threshold = de_threshold(config.system.bs_antennas);
    let pass = errors.len() == rows.len() && max_error <= threshold;
    Ok(DeReport { rows, samples: config.samples, max_error, mean_error, max_error_exact, threshold, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMethod {
    Exhaustive,
    Greedy,
    /// Greedy order reversed.
    Reverse,
    /// Seeded random permutation of all blocks.
    Random,
}

impl OrderMethod {
    pub const ALL: [OrderMethod; 4] = [Self::Exhaustive, Self::Greedy, Self::Reverse, Self::Random];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub sweep_value: f64,
    pub method: OrderMethod,
    pub ee_bits_per_joule: Option<f64>,
    pub sum_rate_bps: Option<f64>,
    pub order: String,
    pub error: String,
}

impl OrderRow {
    pub const HEADER: &'static [&'static str] =
        &["sweep_value", "method", "ee_bits_per_joule", "sum_rate_bps", "order", "error"];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderReport {
    pub rows: Vec<OrderRow>,
    /// Per sweep point: exhaustive >= greedy >= reverse.
    pub chain: Vec<bool>,
    /// Per sweep point: relative EE loss of greedy against exhaustive.
    pub greedy_gap: Vec<Option<f64>>,
}

fn order_point(config: &ExperimentConfig, stats: &ChannelStats, point: &Point) -> Vec<OrderRow> {
    let (system, cons, solver) = (&point.system, &point.constraints, &config.solver);
    let row = |method, res: Result<(f64, f64, String)>| match res {
        Ok((ee, rate, order)) => OrderRow {
            sweep_value: point.value,
            method,
            ee_bits_per_joule: Some(ee),
            sum_rate_bps: Some(rate),
            order,
            error: String::new(),
        },
        Err(e) => OrderRow {
            sweep_value: point.value,
            method,
            ee_bits_per_joule: None,
            sum_rate_bps: None,
            order: String::new(),
            error: e.to_string(),
        },
    };
    let fixed = |order: DecodingOrder| -> Result<(f64, f64, String)> {
        let s = solve_inner(system, stats, &order, cons, solver)?;
        Ok((s.ee_bits_per_joule, s.sum_rate_bps, order_label(&order)))
    };
    let greedy = ordering::greedy_order(system, stats, cons, solver).map(|(o, _)| o);
    OrderMethod::ALL
        .par_iter()
        .map(|&method| {
            let res = match method {
                OrderMethod::Exhaustive => ordering::exhaustive_order(system, stats, cons, solver)
                    .map(|(r, s)| (s.ee_bits_per_joule, s.sum_rate_bps, order_label(&r.order)))
                    .map_err(Error::from),
                OrderMethod::Greedy | OrderMethod::Reverse => match &greedy {
                    Ok(o) if method == OrderMethod::Greedy => fixed(o.clone()),
                    Ok(o) => fixed(o.reversed()),
                    Err(e) => Err(Error::Config(format!("greedy order: {e}"))),
                },
                OrderMethod::Random => fixed(ordering::random_order(system.num_users, system.num_layers, config.seed)),
            };
            row(method, res)
        })
        .collect()
}

/// Solves every sweep point under each decoding-order strategy.
pub fn compare_orders(config: &ExperimentConfig) -> Result<OrderReport> {
    config.validate()?;
    let stats = config.stats()?;
    let points = points(config)?;
    let rows: Vec<OrderRow> = with_pool(config.workers, || {
        points.par_iter().map(|p| order_point(config, &stats, p)).collect::<Vec<_>>().into_iter().flatten().collect()
    })?;
    let ee = |v: f64, m: OrderMethod| {
        rows.iter().find(|r| r.sweep_value == v && r.method == m).and_then(|r| r.ee_bits_per_joule)
    };
    let values = &config.sweep.values;
    let chain = values
        .iter()
        .map(|&v| non_increasing(&[ee(v, OrderMethod::Exhaustive), ee(v, OrderMethod::Greedy), ee(v, OrderMethod::Reverse)]))
        .collect();
    let greedy_gap = values
        .iter()
        .map(|&v| match (ee(v, OrderMethod::Exhaustive), ee(v, OrderMethod::Greedy)) {
            (Some(x), Some(g)) => Some(relative_error(g, x)),
            _ => None,
        })
        .collect();
    Ok(OrderReport { rows, chain, greedy_gap })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub ee_bits_per_joule: f64,
    pub sum_rate_bps: f64,
    pub power_w: f64,
    /// Per-block DE rates in nats, user-major.
    pub rates_nats: Vec<f64>,
    pub ordering: OrderingResult,
    pub num_layers: usize,
    /// `Q_{k,l}` user-major, entries as `[re, im]`.
    pub covariances: Vec<ComplexMatrixJson>,
    pub feasibility: FeasibilityReport,
    pub iterations: IterationCounts,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizeOutput {
    pub solution: SolutionFile,
    pub trace: Vec<TraceRow>,
}

/// Single solve at the base system (the sweep axis is ignored).
pub fn optimize(config: &ExperimentConfig) -> Result<OptimizeOutput> {
    config.validate()?;
    let stats = config.stats()?;
    let point = config.point(config.base_value())?;
    let method = ordering_method(config, &point.system);
    let sol = with_pool(config.workers, || {
        ordering::solve(&point.system, &stats, &point.constraints, &method, &config.solver)
    })??;
    let inner = sol.inner;
    Ok(OptimizeOutput {
        solution: SolutionFile {
            ee_bits_per_joule: inner.ee_bits_per_joule,
            sum_rate_bps: inner.sum_rate_bps,
            power_w: inner.power,
            rates_nats: inner.rates,
            ordering: sol.ordering,
            num_layers: point.system.num_layers,
            covariances: inner.covariances.blocks().iter().map(complex_to_json).collect(),
            feasibility: inner.feasibility,
            iterations: inner.iterations,
            converged: inner.converged,
        },
        trace: inner.trace.rows,
    })
}
