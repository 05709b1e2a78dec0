//! Per-user constrained water-filling.
//!
//! For one user with blocks `s`, the step solves
//!
//! ```text
//! max  sum_s w_s log det(I + Gamma_s Q_s) - tr(C_s Q_s)
//! s.t. sum_s tr(Q_s) <= P,   sum_s tr(R_a Q_s) <= D_a,   Q_s >= 0
//! ```
//!
//! through its Lagrangian: for multipliers `(mu, lambda)` every block is a
//! water-fill against `(C_s + mu I + sum_a lambda_a R_a) / w_s`. The
//! multipliers are found either by cyclic coordinate minimization of the
//! dual function (each coordinate is a monotone root find on the matching
//! slack) or by projected subgradient steps.

use serde::{Deserialize, Serialize};

use super::waterfill::{water_fill, S_FLOOR};
use crate::linalg::{self, c, CMat};
use crate::model::{CovarianceSet, SarConstraint, SarConstraints, SystemConfig};

/// Multipliers of the power and exposure constraints plus the current
/// Dinkelbach ratio (nats per watt).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub mu: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub eta: f64,
}

impl DualState {
    pub fn zeros(constraints: &SarConstraints) -> Self {
        Self {
            mu: vec![0.0; constraints.num_users()],
            lambda: constraints.iter().map(|cs| vec![0.0; cs.len()]).collect(),
            eta: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMethod {
    /// Cyclic coordinate minimization with exact 1-D root finds.
    Coordinate,
    /// Projected subgradient with diminishing steps.
    Subgradient,
}

/// `s0 = 1 / (1 + ||budgets||)` over all power and SAR budgets.
pub fn initial_step(config: &SystemConfig, constraints: &SarConstraints) -> f64 {
    let sq: f64 = config.power_budget.iter().map(|p| p * p).sum::<f64>()
        + constraints.iter().flatten().map(|c| c.budget * c.budget).sum::<f64>();
    1.0 / (1.0 + sq.sqrt())
}

/// One projected subgradient step with step size `step`.
pub fn dual_step(
    dual: &DualState,
    q: &CovarianceSet,
    config: &SystemConfig,
    constraints: &SarConstraints,
    step: f64,
) -> DualState {
    let sar = crate::model::sar_values(constraints, q);
    let mu = dual
        .mu
        .iter()
        .enumerate()
        .map(|(k, &m)| (m + step * (q.user_power(k) - config.power_budget[k])).max(0.0))
        .collect();
    let lambda = dual
        .lambda
        .iter()
        .enumerate()
        .map(|(k, ls)| {
            ls.iter()
                .zip(constraints.user(k))
                .zip(&sar[k])
                .map(|((&l, cons), &v)| (l + step * (v - cons.budget)).max(0.0))
                .collect()
        })
        .collect();
    DualState { mu, lambda, eta: dual.eta }
}

/// One block of a user's subproblem.
#[derive(Clone, Debug)]
pub struct UserBlock {
    pub gamma: CMat,
    /// Linear penalty `C_s` (may be indefinite).
    pub penalty: CMat,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub method: DualMethod,
    pub max_iters: usize,
    /// Relative slack tolerance for the KKT check.
    pub tolerance: f64,
    /// Starting step of the subgradient schedule.
    pub step0: f64,
}

#[derive(Clone, Debug)]
pub struct UserDualSolution {
    pub blocks: Vec<CMat>,
    pub mu: f64,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Penalty matrix `C + mu I + sum_a lambda_a R_a`, symmetrized, eigenvalues
/// floored at [`S_FLOOR`]. Also reports whether the floor was hit.
pub fn penalty_matrix(base: &CMat, shift: f64, lambda: &[f64], sar: &[SarConstraint]) -> (CMat, bool) {
    let n = base.nrows();
    let mut s = base + CMat::identity(n, n) * c(shift);
    for (l, cons) in lambda.iter().zip(sar) {
        if *l != 0.0 {
            s += cons.matrix() * c(*l);
        }
    }
    let (vals, vecs) = linalg::eigh(&s);
    let floored = vals.iter().any(|&v| v < S_FLOOR);
    if !floored {
        return (linalg::hermitize(&s), false);
    }
    let vals: Vec<f64> = vals.into_iter().map(|v| v.max(S_FLOOR)).collect();
    (linalg::reconstruct(&vecs, &vals), true)
}

struct UserProblem<'a> {
    blocks: &'a [UserBlock],
    power_budget: f64,
    sar: &'a [SarConstraint],
}

impl UserProblem<'_> {
    fn primal(&self, mu: f64, lambda: &[f64]) -> Vec<CMat> {
        self.blocks
            .iter()
            .map(|b| {
                let (s, _) = penalty_matrix(&b.penalty, mu, lambda, self.sar);
                water_fill(&(s * c(1.0 / b.weight)), &b.gamma)
            })
            .collect()
    }

    fn power_slack(&self, qs: &[CMat]) -> f64 {
        self.power_budget - qs.iter().map(linalg::trace_re).sum::<f64>()
    }

    fn sar_slack(&self, a: usize, qs: &[CMat]) -> f64 {
        let cons = &self.sar[a];
        cons.budget - qs.iter().map(|q| linalg::trace_product_re(cons.matrix(), q)).sum::<f64>()
    }

    fn kkt_ok(&self, qs: &[CMat], mu: f64, lambda: &[f64], tol: f64) -> bool {
        let ok = |slack: f64, mult: f64, budget: f64| {
            slack >= -tol * budget && (mult == 0.0 || slack <= tol * budget)
        };
        ok(self.power_slack(qs), mu, self.power_budget)
            && (0..self.sar.len()).all(|a| ok(self.sar_slack(a, qs), lambda[a], self.sar[a].budget))
    }

    /// Rescales so every constraint holds exactly.
    fn make_feasible(&self, qs: Vec<CMat>) -> Vec<CMat> {
        let used: f64 = qs.iter().map(linalg::trace_re).sum();
        let mut factor: f64 = 1.0;
        if used > self.power_budget {
            factor = factor.min(self.power_budget / used);
        }
        for a in 0..self.sar.len() {
            let v = self.sar[a].budget - self.sar_slack(a, &qs);
            if v > self.sar[a].budget {
                factor = factor.min(self.sar[a].budget / v);
            }
        }
        if factor < 1.0 {
            qs.into_iter().map(|q| q * c(factor)).collect()
        } else {
            qs
        }
    }

    /// Marginal utility scale: any multiplier above it switches the block off.
    fn scale_hint(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.weight * linalg::max_eigenvalue(&b.gamma))
            .fold(0.0, f64::max)
            .max(1e-300)
    }
}

/// Smallest `x >= 0` with `slack(x) >= 0`, for a non-decreasing `slack`.
/// Returns the multiplier and the number of slack evaluations.
fn solve_multiplier(mut slack: impl FnMut(f64) -> f64, warm: f64, guess: f64, tol: f64) -> (f64, usize) {
    let mut evals = 1;
    let f0 = slack(0.0);
    if f0 >= -tol {
        return (0.0, evals);
    }
    let start = if warm > 0.0 { warm } else { guess };
    let fs = slack(start);
    evals += 1;
    let (mut lo, mut flo, mut hi, mut fhi);
    if fs >= 0.0 {
        hi = start;
        fhi = fs;
        lo = 0.0;
        flo = f0;
        for _ in 0..200 {
            let y = hi * 0.25;
            let fy = slack(y);
            evals += 1;
            if fy >= 0.0 {
                hi = y;
                fhi = fy;
            } else {
                lo = y;
                flo = fy;
                break;
            }
        }
    } else {
        lo = start;
        flo = fs;
        hi = start;
        fhi = fs;
        for _ in 0..400 {
            let y = lo * 4.0;
            let fy = slack(y);
            evals += 1;
            if fy >= 0.0 {
                hi = y;
                fhi = fy;
                break;
            }
            lo = y;
            flo = fy;
        }
        if fhi < 0.0 {
            return (hi, evals);
        }
    }
    // Illinois variant of regula falsi
    let mut side = 0i8;
    for _ in 0..200 {
        if fhi <= tol || hi - lo <= 1e-15 * hi {
            break;
        }
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = slack(x);
        evals += 1;
        if fx >= 0.0 {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        }
    }
    (hi, evals)
}

/// Solves one user's subproblem starting from the multipliers `warm_mu`, `warm_lambda`.
pub fn solve_user(
    blocks: &[UserBlock],
    power_budget: f64,
    sar: &[SarConstraint],
    warm_mu: f64,
    warm_lambda: &[f64],
    opts: &DualOptions,
) -> UserDualSolution {
    let problem = UserProblem { blocks, power_budget, sar };
    let mut mu = warm_mu.max(0.0);
    let mut lambda: Vec<f64> = (0..sar.len()).map(|a| warm_lambda.get(a).copied().unwrap_or(0.0).max(0.0)).collect();
    let mut converged = false;
    let mut iterations = 0;
    let mut qs = Vec::new();

    match opts.method {
        DualMethod::Coordinate => {
            let hint = problem.scale_hint();
            for sweep in 1..=opts.max_iters.max(1) {
                iterations = sweep;
                let lam = lambda.clone();
                mu = solve_multiplier(
                    |x| problem.power_slack(&problem.primal(x, &lam)),
                    mu,
                    0.5 * hint,
                    0.1 * opts.tolerance * power_budget,
                )
                .0;
                for a in 0..sar.len() {
                    let mut lam = lambda.clone();
                    let r_scale = linalg::max_eigenvalue(sar[a].matrix()).max(1e-300);
                    let (x, _) = solve_multiplier(
                        |x| {
                            lam[a] = x;
                            problem.sar_slack(a, &problem.primal(mu, &lam))
                        },
                        lambda[a],
                        0.5 * hint / r_scale,
                        0.1 * opts.tolerance * sar[a].budget,
                    );
                    lambda[a] = x;
                }
                qs = problem.primal(mu, &lambda);
                if problem.kkt_ok(&qs, mu, &lambda, opts.tolerance) {
                    converged = true;
                    break;
                }
            }
        }
        DualMethod::Subgradient => {
            let mut calm = 0;
            if mu == 0.0 && lambda.iter().all(|&l| l == 0.0) {
                // start where every block is switched off instead of at an unbounded primal
                mu = problem.scale_hint();
            }
            for v in 1..=opts.max_iters.max(1) {
                iterations = v;
                qs = problem.primal(mu, &lambda);
                let step = opts.step0 / (v as f64).sqrt();
                let new_mu = (mu - step * problem.power_slack(&qs)).max(0.0);
                let new_lambda: Vec<f64> = (0..sar.len())
                    .map(|a| (lambda[a] - step * problem.sar_slack(a, &qs)).max(0.0))
                    .collect();
                let movement = (new_mu - mu)
                    .abs()
                    .max(new_lambda.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                let violation = (-problem.power_slack(&qs) / power_budget)
                    .max((0..sar.len()).map(|a| -problem.sar_slack(a, &qs) / sar[a].budget).fold(0.0, f64::max))
                    .max(0.0);
                mu = new_mu;
                lambda = new_lambda;
                calm = if violation < 1e-6 && movement < 1e-6 { calm + 1 } else { 0 };
                if calm >= 10 {
                    converged = true;
                    break;
                }
            }
            qs = problem.primal(mu, &lambda);
        }
    }
    let blocks = problem.make_feasible(qs);
    UserDualSolution { blocks, mu, lambda, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SarConstraint;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> CMat {
        CMat::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|&x| c(x))))
    }

    fn opts(method: DualMethod) -> DualOptions {
        DualOptions { method, max_iters: 200, tolerance: 1e-10, step0: 0.5 }
    }

    #[test]
    fn strict_slack_keeps_zero_multipliers() {
        let cons = SarConstraints::none(1);
        let config = SystemConfig::uniform(1, 1, 1, 2, 1.0, 1.0, 2.0, 0.0, 0.0, 10.0);
        let q = CovarianceSet::new(1, vec![CMat::identity(2, 2)]).unwrap();
        let d = dual_step(&DualState::zeros(&cons), &q, &config, &cons, 0.5);
        assert_eq!(d.mu, vec![0.0]);
    }

    #[test]
    fn violated_power_moves_multiplier() {
        let cons = SarConstraints::none(1);
        let config = SystemConfig::uniform(1, 1, 1, 1, 1.0, 1.0, 2.0, 0.0, 0.0, 1.0);
        let q = CovarianceSet::new(1, vec![CMat::identity(1, 1) * c(2.0)]).unwrap();
        let d = dual_step(&DualState::zeros(&cons), &q, &config, &cons, 0.1);
        assert!((d.mu[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn power_only_matches_classical_waterfill() {
        // gains 4 and 1, budget 1: levels solve 1/mu - 1/g = q
        let blocks = vec![UserBlock { gamma: diag(&[4.0, 1.0]), penalty: CMat::zeros(2, 2), weight: 1.0 }];
        let sol = solve_user(&blocks, 1.0, &[], 0.0, &[], &opts(DualMethod::Coordinate));
        assert!(sol.converged);
        // water level 1/mu = (1 + 1/4 + 1) / 2 = 1.125 so both active
        let q = &sol.blocks[0];
        assert!((q[(0, 0)].re - (1.125 - 0.25)).abs() < 1e-8);
        assert!((q[(1, 1)].re - (1.125 - 1.0)).abs() < 1e-8);
        assert!((sol.mu - 1.0 / 1.125).abs() < 1e-8);
    }

    #[test]
    fn sar_binding_is_met_with_complementary_slackness() {
        let r = diag(&[4.0, 0.5]);
        let sar = vec![SarConstraint::new(r, 0.5).unwrap()];
        let blocks = vec![UserBlock { gamma: diag(&[10.0, 2.0]), penalty: CMat::zeros(2, 2), weight: 1.0 }];
        for method in [DualMethod::Coordinate, DualMethod::Subgradient] {
            let mut o = opts(method);
            o.max_iters = 20000;
            let sol = solve_user(&blocks, 1.0, &sar, 0.0, &[0.0], &o);
            let q = &sol.blocks[0];
            let used = linalg::trace_re(q);
            let sar_used = linalg::trace_product_re(sar[0].matrix(), q);
            assert!(used <= 1.0 + 1e-9 && sar_used <= 0.5 + 1e-9);
            assert!((sol.mu * (1.0 - used)).abs() < 1e-4, "{method:?}");
            assert!((sol.lambda[0] * (0.5 - sar_used)).abs() < 1e-4, "{method:?}");
        }
    }
}
