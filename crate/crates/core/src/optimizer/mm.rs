//! Linearization of the interference terms and the ratio update.

use crate::error::Result;
use crate::linalg::{self, c, CMat};
use crate::model::{self, ChannelStats, CovarianceSet, DecodingOrder, SarConstraints, SystemConfig};
use crate::rates::{ModelState, RateModel};

use super::dual::{penalty_matrix, DualState};

/// Gradients of `log det K_t` with respect to every interfering block,
/// taken at a reference point.
#[derive(Clone, Debug)]
pub struct MmGradients {
    /// For every target `t`, `(s, Delta^t_s)` over its interferers `s`.
    pub deltas: Vec<Vec<(usize, CMat)>>,
    /// `log det K_t` at the reference point.
    pub rate_minus_ref: Vec<f64>,
    pub q_ref: CovarianceSet,
}

impl MmGradients {
    pub fn get(&self, target: usize, interferer: usize) -> Option<&CMat> {
        self.deltas[target].iter().find(|(s, _)| *s == interferer).map(|(_, d)| d)
    }

    /// `sum_{t : s in I(t)} w_t Delta^t_s` for every block `s`.
    pub fn linear_penalties(&self, model: &RateModel) -> Vec<CMat> {
        (0..model.num_blocks())
            .map(|s| {
                let n = self.q_ref.block(s).nrows();
                let mut acc = CMat::zeros(n, n);
                for &t in model.victims(s) {
                    if let Some(d) = self.get(t, s) {
                        acc += d * c(model.term(t).weight);
                    }
                }
                acc
            })
            .collect()
    }
}

/// `Delta^t_s = V_s diag(Omega_s^T K_t^-1) V_s^H` at `q_ref` for every
/// (target, interferer) pair of `model`.
pub fn mm_gradients_for(model: &RateModel, stats: &ChannelStats, q_ref: &CovarianceSet) -> MmGradients {
    let mut deltas = Vec::with_capacity(model.num_blocks());
    let mut rate_minus_ref = Vec::with_capacity(model.num_blocks());
    for t in 0..model.num_blocks() {
        let k_diag = model.interference_diag(stats, q_ref, t);
        rate_minus_ref.push(k_diag.iter().map(|k| k.ln()).sum());
        let inv = k_diag.map(|k| 1.0 / k);
        let mut per_user: Vec<Option<CMat>> = vec![None; stats.num_users()];
        let list = model
            .term(t)
            .interferers
            .iter()
            .map(|&s| {
                let u = model.user_of(s);
                let d = per_user[u].get_or_insert_with(|| model::user_side_weight(stats, u, &inv));
                (s, d.clone())
            })
            .collect();
        deltas.push(list);
    }
    MmGradients { deltas, rate_minus_ref, q_ref: q_ref.clone() }
}

/// Gradients for the SIC rate model of `order`.
pub fn mm_gradients(
    config: &SystemConfig,
    stats: &ChannelStats,
    q_ref: &CovarianceSet,
    order: &DecodingOrder,
) -> Result<MmGradients> {
    let model = RateModel::sic(config, order)?;
    model.check(config, stats, q_ref)?;
    Ok(mm_gradients_for(&model, stats, q_ref))
}

/// `sum_t w_t [R+_t(Q) - r-_t(Q_ref) - sum_s tr(Delta^t_s (Q_s - Q_ref,s))]` in nats,
/// given the `R+_t(Q)` values.
pub fn surrogate_objective(model: &RateModel, q: &CovarianceSet, grads: &MmGradients, rate_plus: &[f64]) -> f64 {
    let mut total = 0.0;
    for (t, (deltas, rp)) in grads.deltas.iter().zip(rate_plus).enumerate() {
        let mut lin = 0.0;
        for (s, d) in deltas {
            lin += linalg::trace_product_re(d, &(q.block(*s) - grads.q_ref.block(*s)));
        }
        total += model.term(t).weight * (rp - grads.rate_minus_ref[t] - lin);
    }
    total
}

/// Surrogate value at an evaluated point.
pub fn surrogate_at(model: &RateModel, q: &CovarianceSet, grads: &MmGradients, state: &ModelState) -> f64 {
    let rp: Vec<f64> = state.blocks.iter().map(|b| b.rate_plus).collect();
    surrogate_objective(model, q, grads, &rp)
}

/// `max(surrogate / power, 0)` in nats per watt.
pub fn dinkelbach_eta(surrogate: f64, power: f64) -> f64 {
    (surrogate / power).max(0.0)
}

/// `sum_{t : s in I(t)} w_t V_s diag(Omega_s^T (K_t + Gamma~_t)^-1) V_s^H`:
/// the gradient of the weighted `R+` terms with respect to each block
/// through the interference it causes.
pub fn coupling_gradients(model: &RateModel, stats: &ChannelStats, state: &ModelState) -> Vec<CMat> {
    let sens: Vec<_> = state
        .blocks
        .iter()
        .map(|b| b.params.interference_sensitivity(&b.k_diag))
        .collect();
    (0..model.num_blocks())
        .map(|s| {
            let u = model.user_of(s);
            let n = stats.user_antennas(u);
            let victims = model.victims(s);
            if victims.is_empty() {
                return CMat::zeros(n, n);
            }
            let mut weight = nalgebra::DVector::zeros(stats.bs_antennas());
            for &t in victims {
                weight += &sens[t] * model.term(t).weight;
            }
            model::user_side_weight(stats, u, &weight)
        })
        .collect()
}

/// Penalty matrix of a block together with a flag telling whether the
/// eigenvalue floor had to be applied.
#[derive(Clone, Debug)]
pub struct AuxiliaryMatrix {
    pub matrix: CMat,
    pub degenerate: bool,
}

/// `S = sum_t w_t (Delta^t_s - coupling) + (eta xi + mu) I + sum_a lambda_a R_a`
/// for block `target`, floored to be positive definite.
///
/// `coupling` holds the output of [`coupling_gradients`]; pass `None` to
/// drop that term.
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_s(
    target: usize,
    model: &RateModel,
    grads: &MmGradients,
    coupling: Option<&[CMat]>,
    dual: &DualState,
    config: &SystemConfig,
    constraints: &SarConstraints,
) -> AuxiliaryMatrix {
    let user = model.user_of(target);
    let n = config.user_antennas[user];
    let mut base = CMat::zeros(n, n);
    for &t in model.victims(target) {
        if let Some(d) = grads.get(t, target) {
            base += d * c(model.term(t).weight);
        }
    }
    if let Some(cg) = coupling {
        base -= &cg[target];
    }
    let shift = dual.eta * config.amp_inv_efficiency[user] + dual.mu[user];
    let (matrix, degenerate) = penalty_matrix(&base, shift, &dual.lambda[user], constraints.user(user));
    AuxiliaryMatrix { matrix, degenerate }
}
