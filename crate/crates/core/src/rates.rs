//! Weighted sum of hardened rates over a set of transmit blocks.
//!
//! Every scheme handled by the solver is a list of terms, one per block
//! `s`, each contributing `w_s * (R+_s - r-_s)` where the interference seen
//! by `s` is the set of blocks `I(s)` plus white noise. RSMA and NOMA take
//! `I(s)` from the SIC order, SDMA from all other users, and the orthogonal
//! schemes have no interference but a scaled noise floor and weight.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::de::{self, DeOptions, DeParams};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{self, Block, ChannelStats, CovarianceSet, DecodingOrder, SystemConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RateTerm {
    /// Flat (user-major) indices of the interfering blocks.
    pub interferers: Vec<usize>,
    pub noise_power: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateModel {
    num_users: usize,
    num_layers: usize,
    terms: Vec<RateTerm>,
    /// For every block, the terms it interferes with.
    victims: Vec<Vec<usize>>,
}

impl RateModel {
    pub fn new(num_users: usize, num_layers: usize, terms: Vec<RateTerm>) -> Result<Self> {
        let n = num_users * num_layers;
        if terms.len() != n {
            return Err(Error::Dimension(format!("rate model needs {n} terms, got {}", terms.len())));
        }
        let mut victims = vec![Vec::new(); n];
        for (t, term) in terms.iter().enumerate() {
            if !(term.noise_power > 0.0) || !(term.weight > 0.0) {
                return Err(Error::InvalidConfig("noise power and weight must be positive".into()));
            }
            for &s in &term.interferers {
                if s >= n || s == t {
                    return Err(Error::InvalidConfig(format!("bad interferer {s} for block {t}")));
                }
                victims[s].push(t);
            }
        }
        Ok(Self { num_users, num_layers, terms, victims })
    }

    /// Successive decoding in the given order: every block is interfered by
    /// the blocks decoded after it.
    pub fn sic(config: &SystemConfig, order: &DecodingOrder) -> Result<Self> {
        if order.num_users() != config.num_users || order.num_layers() != config.num_layers {
            return Err(Error::InvalidOrder("order does not match the configuration".into()));
        }
        let l = config.num_layers;
        let terms = (0..config.num_blocks())
            .map(|idx| RateTerm {
                interferers: order
                    .interferers(Block::from_index(idx, l))
                    .iter()
                    .map(|b| b.index(l))
                    .collect(),
                noise_power: config.noise_power,
                weight: 1.0,
            })
            .collect();
        Self::new(config.num_users, l, terms)
    }

    /// Every block is interfered by all blocks of the other users.
    pub fn interference_as_noise(config: &SystemConfig) -> Result<Self> {
        let l = config.num_layers;
        let terms = (0..config.num_blocks())
            .map(|idx| {
                let user = idx / l;
                RateTerm {
                    interferers: (0..config.num_blocks()).filter(|&s| s / l != user).collect(),
                    noise_power: config.noise_power,
                    weight: 1.0,
                }
            })
            .collect();
        Self::new(config.num_users, l, terms)
    }

    /// Interference-free blocks sharing a noise level and weight.
    pub fn orthogonal(config: &SystemConfig, noise_power: f64, weight: f64) -> Result<Self> {
        let terms = (0..config.num_blocks())
            .map(|_| RateTerm { interferers: Vec::new(), noise_power, weight })
            .collect();
        Self::new(config.num_users, config.num_layers, terms)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_blocks(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, t: usize) -> &RateTerm {
        &self.terms[t]
    }

    pub fn terms(&self) -> &[RateTerm] {
        &self.terms
    }

    /// Terms that block `s` interferes with.
    pub fn victims(&self, s: usize) -> &[usize] {
        &self.victims[s]
    }

    pub fn user_of(&self, s: usize) -> usize {
        s / self.num_layers
    }

    pub fn check(&self, config: &SystemConfig, stats: &ChannelStats, q: &CovarianceSet) -> Result<()> {
        config.validate()?;
        stats.check_config(config)?;
        if self.num_users != config.num_users || self.num_layers != config.num_layers {
            return Err(Error::Dimension("rate model does not match the configuration".into()));
        }
        if q.num_users() != config.num_users || q.num_layers() != config.num_layers {
            return Err(Error::Dimension("covariance set does not match the configuration".into()));
        }
        for k in 0..config.num_users {
            if q.user_layers(k).iter().any(|b| b.nrows() != config.user_antennas[k]) {
                return Err(Error::Dimension(format!("covariance size mismatch for user {k}")));
            }
        }
        Ok(())
    }

    /// Interference-plus-noise diagonal of term `t`.
    pub fn interference_diag(&self, stats: &ChannelStats, q: &CovarianceSet, t: usize) -> DVector<f64> {
        let term = &self.terms[t];
        let blocks: Vec<Block> = term
            .interferers
            .iter()
            .map(|&s| Block::from_index(s, self.num_layers))
            .collect();
        model::interference_diag(stats, q, &blocks, term.noise_power)
    }

    /// Deterministic-equivalent rates of every term at `q`.
    ///
    /// `warm` supplies starting points for the fixed-point iterations.
    pub fn evaluate(
        &self,
        stats: &ChannelStats,
        q: &CovarianceSet,
        opts: &DeOptions,
        warm: Option<&ModelState>,
    ) -> Result<ModelState> {
        let blocks = (0..self.num_blocks())
            .into_par_iter()
            .map(|t| {
                let k_diag = self.interference_diag(stats, q, t);
                let user = self.user_of(t);
                let init = warm.map(|w| &w.blocks[t].params.phi);
                let params = de::de_fixed_point_with(stats, user, q.block(t), &k_diag, opts, init)?;
                let rate_plus = de::de_rate_plus(&params, q.block(t), &k_diag);
                let rate_minus = de::log_det_diag(&k_diag);
                Ok(BlockState { k_diag, params, rate_plus, rate_minus })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelState { blocks })
    }
}

#[derive(Clone, Debug)]
pub struct BlockState {
    pub k_diag: DVector<f64>,
    pub params: DeParams,
    /// Nats.
    pub rate_plus: f64,
    /// Nats.
    pub rate_minus: f64,
}

impl BlockState {
    pub fn rate(&self) -> f64 {
        self.rate_plus - self.rate_minus
    }
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub blocks: Vec<BlockState>,
}

impl ModelState {
    /// `sum_t w_t (R+_t - r-_t)` in nats.
    pub fn weighted_rate(&self, model: &RateModel) -> f64 {
        self.blocks.iter().zip(model.terms()).map(|(b, t)| t.weight * b.rate()).sum()
    }

    /// Weighted per-term rates in nats.
    pub fn weighted_rates(&self, model: &RateModel) -> Vec<f64> {
        self.blocks.iter().zip(model.terms()).map(|(b, t)| t.weight * b.rate()).collect()
    }

    pub fn gammas(&self) -> Vec<&CMat> {
        self.blocks.iter().map(|b| &b.params.gamma).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_stats, GeneratorParams};

    #[test]
    fn sic_model_matches_direct_de() {
        let config = SystemConfig::uniform(2, 2, 8, 2, 1.0, 1e-12, 5.0, 0.1, 1.0, 1e-3);
        let stats = generate_stats(&GeneratorParams::default(), 8, &[2, 2]).unwrap();
        let order = DecodingOrder::from_ranks(2, 2, vec![3, 1, 4, 2]).unwrap();
        let q = CovarianceSet::scaled_identity(&config, &[1e-4, 2e-4]);
        let model = RateModel::sic(&config, &order).unwrap();
        let state = model.evaluate(&stats, &q, &DeOptions::precise(), None).unwrap();
        let direct = de::de_ee(&config, &stats, &q, &order, &DeOptions::precise()).unwrap();
        for (a, b) in state.weighted_rates(&model).iter().zip(&direct.rates) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        // rank-4 block is decoded last and sees only noise
        assert!(model.term(2).interferers.is_empty());
        assert_eq!(model.term(1).interferers, vec![3, 0, 2]);
        assert_eq!(model.victims(2), &[0, 1, 3]);
    }

    #[test]
    fn interference_as_noise_sets() {
        let config = SystemConfig::uniform(3, 1, 4, 1, 1.0, 1.0, 2.0, 0.0, 0.0, 1.0);
        let model = RateModel::interference_as_noise(&config).unwrap();
        assert_eq!(model.term(1).interferers, vec![0, 2]);
        let orth = RateModel::orthogonal(&config, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!(orth.terms().iter().all(|t| t.interferers.is_empty()));
    }
}
