//! The inner solver for a fixed rate model.
//!
//! Outer loop: linearize `log det K_t` at the current point (MM step `l`).
//! Middle loop: Dinkelbach updates of the ratio `eta` (step `t`).
//! Inner loop: for fixed `eta`, ascend `surrogate - eta * P` by refreshing
//! the DE parameters, solving the per-user constrained water-filling model
//! exactly, and line-searching along the segment towards its solution
//! (step `v2`). Only improving points are accepted, which makes `eta`
//! non-decreasing within an MM step and the DE objective non-decreasing
//! across MM steps.

use serde::{Deserialize, Serialize};

use super::dual::{self, DualMethod, DualOptions, DualState, UserBlock};
use super::mm::{self, MmGradients};
use super::waterfill::log_det_gradient;
use crate::de::DeOptions;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::model::{
    self, ChannelStats, CovarianceSet, DecodingOrder, FeasibilityReport, SarConstraints, SystemConfig,
};
use crate::rates::{ModelState, RateModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Sum rate over total power consumption.
    EnergyEfficiency,
    /// Sum rate alone.
    SumRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative change of `eta` that ends the Dinkelbach loop.
    pub dinkelbach_tol: f64,
    /// Relative change of the objective that ends the MM loop.
    pub mm_tol: f64,
    /// Relative directional-derivative threshold of the inner ascent.
    pub ao_tol: f64,
    pub max_ao_iters: usize,
    pub max_dual_iters: usize,
    pub max_mm_iters: usize,
    pub max_dinkelbach_iters: usize,
    pub dual_method: DualMethod,
    /// Relative KKT tolerance of the per-user dual solve.
    pub dual_tol: f64,
    /// Starting subgradient step; derived from the budgets when absent.
    pub dual_step0: Option<f64>,
    pub de: DeOptions,
    pub objective: Objective,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dinkelbach_tol: 1e-4,
            mm_tol: 1e-4,
            ao_tol: 1e-5,
            max_ao_iters: 100,
            max_dual_iters: 200,
            max_mm_iters: 50,
            max_dinkelbach_iters: 50,
            dual_method: DualMethod::Coordinate,
            dual_tol: 1e-10,
            dual_step0: None,
            de: DeOptions::precise(),
            objective: Objective::EnergyEfficiency,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.dinkelbach_tol, self.mm_tol, self.ao_tol, self.dual_tol, self.de.tolerance];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if [self.max_ao_iters, self.max_dual_iters, self.max_mm_iters, self.max_dinkelbach_iters]
            .contains(&0)
        {
            return Err(Error::InvalidConfig("iteration caps must be positive".into()));
        }
        Ok(())
    }

    pub fn sum_rate(&self) -> Self {
        Self { objective: Objective::SumRate, ..self.clone() }
    }
}

/// One row of the iteration log, written after every inner ascent step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub mm: usize,
    pub dinkelbach: usize,
    /// Largest per-user dual iteration count in this step.
    pub dual: usize,
    pub ao: usize,
    /// DE energy efficiency at the current point.
    pub ee_bits_per_joule: f64,
    /// Current ratio in nats per watt.
    pub eta: f64,
    /// Largest relative constraint violation.
    pub max_violation: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    /// Objective after each MM step, starting with the initial point
    /// (nats per watt for EE, nats for sum rate).
    pub mm_objective: Vec<f64>,
    /// Ratio values of every Dinkelbach loop, starting with its initial value.
    pub eta: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub ao: usize,
    pub dual: usize,
    pub mm: usize,
    pub dinkelbach: usize,
}

#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub covariances: CovarianceSet,
    pub ee_bits_per_joule: f64,
    pub sum_rate_bps: f64,
    /// Weighted per-block rates in nats.
    pub rates: Vec<f64>,
    pub power: f64,
    pub feasibility: FeasibilityReport,
    pub trace: SolverTrace,
    pub iterations: IterationCounts,
    /// False when an iteration cap stopped a loop.
    pub converged: bool,
}

/// Strictly feasible start: `c_k I` with
/// `c_k = 0.9 min(P_k / (L N_k), min_a D_a / (L tr R_a))`.
pub fn initial_covariances(config: &SystemConfig, constraints: &SarConstraints) -> CovarianceSet {
    let l = config.num_layers as f64;
    let levels: Vec<f64> = (0..config.num_users)
        .map(|k| {
            let mut level = config.power_budget[k] / (l * config.user_antennas[k] as f64);
            for cons in constraints.user(k) {
                let tr = linalg::trace_re(cons.matrix());
                if tr > 0.0 {
                    level = level.min(cons.budget / (l * tr));
                }
            }
            0.9 * level
        })
        .collect();
    CovarianceSet::scaled_identity(config, &levels)
}

/// Largest relative violation of any power or exposure budget.
pub fn max_violation(config: &SystemConfig, constraints: &SarConstraints, q: &CovarianceSet) -> f64 {
    let report = model::check_feasible(config, constraints, q);
    let p = -report.min_relative_power_slack(config);
    let s = -report.min_relative_sar_slack(constraints);
    p.max(if s.is_finite() { s } else { 0.0 }).max(0.0)
}

struct Context<'a> {
    config: &'a SystemConfig,
    stats: &'a ChannelStats,
    model: &'a RateModel,
    constraints: &'a SarConstraints,
    solver: &'a SolverConfig,
    dual_opts: DualOptions,
}

impl Context<'_> {
    fn evaluate(&self, q: &CovarianceSet, warm: Option<&ModelState>) -> Result<ModelState> {
        self.model.evaluate(self.stats, q, &self.solver.de, warm)
    }

    fn power(&self, q: &CovarianceSet) -> f64 {
        model::power_consumption(self.config, q)
    }

    fn objective(&self, q: &CovarianceSet, state: &ModelState) -> f64 {
        let rate = state.weighted_rate(self.model);
        match self.solver.objective {
            Objective::EnergyEfficiency => rate / self.power(q),
            Objective::SumRate => rate,
        }
    }

    fn ee_bits(&self, q: &CovarianceSet, state: &ModelState) -> f64 {
        self.config.bandwidth * state.weighted_rate(self.model) / (std::f64::consts::LN_2 * self.power(q))
    }

    /// `surrogate - eta * P` (the power term only for the EE objective).
    fn merit(&self, q: &CovarianceSet, state: &ModelState, grads: &MmGradients, eta: f64) -> f64 {
        let s = mm::surrogate_at(self.model, q, grads, state);
        match self.solver.objective {
            Objective::EnergyEfficiency => s - eta * self.power(q),
            Objective::SumRate => s,
        }
    }
}

struct Ascent {
    q: CovarianceSet,
    state: ModelState,
    ao_iters: usize,
    dual_iters: usize,
    converged: bool,
}

/// Maximizes `surrogate - eta P` from `(q, state)`, accepting only improving points.
#[allow(clippy::too_many_arguments)]
fn ascend(
    ctx: &Context,
    grads: &MmGradients,
    linear: &[CMat],
    eta: f64,
    mut q: CovarianceSet,
    mut state: ModelState,
    duals: &mut DualState,
    trace: &mut SolverTrace,
    (mm_step, dk_step): (usize, usize),
) -> Result<Ascent> {
    let model = ctx.model;
    let config = ctx.config;
    let eta_cost = match ctx.solver.objective {
        Objective::EnergyEfficiency => eta,
        Objective::SumRate => 0.0,
    };
    let mut merit = ctx.merit(&q, &state, grads, eta);
    let mut dual_total = 0;
    let mut converged = false;
    let mut ao_iters = 0;

    for v2 in 1..=ctx.solver.max_ao_iters {
        ao_iters = v2;
        let coupling = mm::coupling_gradients(model, ctx.stats, &state);
        let penalties: Vec<CMat> = (0..model.num_blocks())
            .map(|s| {
                let n = q.block(s).nrows();
                let xi = config.amp_inv_efficiency[model.user_of(s)];
                &linear[s] - &coupling[s] + CMat::identity(n, n) * c(eta_cost * xi)
            })
            .collect();

        let l = config.num_layers;
        let mut target = Vec::with_capacity(model.num_blocks());
        let mut dual_max = 0;
        for k in 0..config.num_users {
            let blocks: Vec<UserBlock> = (k * l..(k + 1) * l)
                .map(|s| UserBlock {
                    gamma: state.blocks[s].params.gamma.clone(),
                    penalty: penalties[s].clone(),
                    weight: model.term(s).weight,
                })
                .collect();
            let sol = dual::solve_user(
                &blocks,
                config.power_budget[k],
                ctx.constraints.user(k),
                duals.mu[k],
                &duals.lambda[k],
                &ctx.dual_opts,
            );
            duals.mu[k] = sol.mu;
            duals.lambda[k] = sol.lambda;
            dual_max = dual_max.max(sol.iterations);
            target.extend(sol.blocks);
        }
        dual_total += dual_max;

        let direction: Vec<CMat> = target.iter().zip(q.blocks()).map(|(t, b)| t - b).collect();
        let slope: f64 = (0..model.num_blocks())
            .map(|s| {
                let own = log_det_gradient(&state.blocks[s].params.gamma, q.block(s)) * c(model.term(s).weight);
                linalg::trace_product_re(&(own - &penalties[s]), &direction[s])
            })
            .sum();
        let scale = mm::surrogate_at(model, &q, grads, &state).abs().max(1e-300);
        if slope <= ctx.solver.ao_tol * scale {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step >= 1e-12 {
            let blocks: Vec<CMat> = q
                .blocks()
                .iter()
                .zip(&direction)
                .map(|(b, d)| linalg::hermitize(&(b + d * c(step))))
                .collect();
            let trial = CovarianceSet::new_unchecked(config.num_layers, blocks)?;
            let trial_state = ctx.evaluate(&trial, Some(&state))?;
            let trial_merit = ctx.merit(&trial, &trial_state, grads, eta);
            if trial_merit >= merit + 1e-4 * step * slope {
                accepted = Some((trial, trial_state, trial_merit));
                break;
            }
            step *= 0.5;
        }
        let Some((nq, ns, nm)) = accepted else {
            // no improving point along the segment: stationary to rounding
            converged = true;
            break;
        };
        q = nq;
        state = ns;
        merit = nm;
        trace.rows.push(TraceRow {
            mm: mm_step,
            dinkelbach: dk_step,
            dual: dual_max,
            ao: v2,
            ee_bits_per_joule: ctx.ee_bits(&q, &state),
            eta,
            max_violation: max_violation(config, ctx.constraints, &q),
        });
    }
    Ok(Ascent { q, state, ao_iters, dual_iters: dual_total, converged })
}

/// Runs the full solver on an arbitrary rate model.
pub fn solve_model(
    config: &SystemConfig,
    stats: &ChannelStats,
    model: &RateModel,
    constraints: &SarConstraints,
    solver: &SolverConfig,
    initial: Option<&CovarianceSet>,
) -> Result<InnerSolution> {
    solver.validate()?;
    constraints.check_config(config)?;
    let mut q = match initial {
        Some(q0) => q0.clone(),
        None => initial_covariances(config, constraints),
    };
    model.check(config, stats, &q)?;

    let step0 = solver.dual_step0.unwrap_or_else(|| dual::initial_step(config, constraints));
    let ctx = Context {
        config,
        stats,
        model,
        constraints,
        solver,
        dual_opts: DualOptions {
            method: solver.dual_method,
            max_iters: solver.max_dual_iters,
            tolerance: solver.dual_tol,
            step0,
        },
    };

    let mut state = ctx.evaluate(&q, None)?;
    let mut objective = ctx.objective(&q, &state);
    let mut trace = SolverTrace { mm_objective: vec![objective], ..Default::default() };
    let mut counts = IterationCounts::default();
    let mut duals = DualState::zeros(constraints);
    let mut converged = false;

    for mm_step in 1..=solver.max_mm_iters {
        counts.mm = mm_step;
        let grads = mm::mm_gradients_for(model, stats, &q);
        let linear = grads.linear_penalties(model);

        let mut eta = match solver.objective {
            Objective::EnergyEfficiency => mm::dinkelbach_eta(mm::surrogate_at(model, &q, &grads, &state), ctx.power(&q)),
            Objective::SumRate => 0.0,
        };
        let mut etas = vec![eta];
        let rounds = match solver.objective {
            Objective::EnergyEfficiency => solver.max_dinkelbach_iters,
            Objective::SumRate => 1,
        };
        let mut dk_converged = solver.objective == Objective::SumRate;
        for dk_step in 1..=rounds {
            counts.dinkelbach += 1;
            duals.eta = eta;
            let out = ascend(&ctx, &grads, &linear, eta, q, state, &mut duals, &mut trace, (mm_step, dk_step))?;
            q = out.q;
            state = out.state;
            counts.ao += out.ao_iters;
            counts.dual += out.dual_iters;
            if solver.objective == Objective::SumRate {
                dk_converged = out.converged;
                break;
            }
            let new_eta = mm::dinkelbach_eta(mm::surrogate_at(model, &q, &grads, &state), ctx.power(&q));
            etas.push(new_eta);
            let done = (new_eta - eta).abs() <= solver.dinkelbach_tol * new_eta.abs().max(1e-300);
            eta = new_eta;
            if done {
                dk_converged = true;
                break;
            }
        }
        trace.eta.push(etas);

        let new_objective = ctx.objective(&q, &state);
        trace.mm_objective.push(new_objective);
        let change = (new_objective - objective).abs();
        objective = new_objective;
        if dk_converged && change <= solver.mm_tol * new_objective.abs().max(1e-300) {
            converged = true;
            break;
        }
    }

    if state.weighted_rate(model) <= 0.0 {
        // nothing to gain from transmitting
        q = CovarianceSet::zeros(config);
        state = ctx.evaluate(&q, None)?;
    }

    let rates = state.weighted_rates(model);
    let power = ctx.power(&q);
    let sum_rate_bps = config.bandwidth * rates.iter().sum::<f64>() / std::f64::consts::LN_2;
    let feasibility = model::check_feasible(config, constraints, &q);
    Ok(InnerSolution {
        ee_bits_per_joule: sum_rate_bps / power,
        sum_rate_bps,
        rates,
        power,
        feasibility,
        covariances: q,
        trace,
        iterations: counts,
        converged,
    })
}

/// Solves the covariance design for a fixed SIC decoding order.
pub fn solve_inner(
    config: &SystemConfig,
    stats: &ChannelStats,
    order: &DecodingOrder,
    constraints: &SarConstraints,
    solver: &SolverConfig,
) -> Result<InnerSolution> {
    let model = RateModel::sic(config, order)?;
    solve_model(config, stats, &model, constraints, solver, None)
}
