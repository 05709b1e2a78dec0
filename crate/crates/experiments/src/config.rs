//! JSON experiment configuration. Powers are given in dBm and converted to
//! watts once, in [`ExperimentConfig::system_at`].

use std::path::{Path, PathBuf};

use rsma_core::channel::{self, ChannelFile, ComplexMatrixJson, GeneratorParams};
use rsma_core::model::{dbm_to_watts, SarConstraint, SarConstraints, SystemConfig};
use rsma_core::optimizer::SolverConfig;
use rsma_core::{ChannelStats, DecodingOrder};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub num_users: usize,
    pub num_layers: usize,
    pub bs_antennas: usize,
    pub user_antennas: usize,
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    /// Power-amplifier efficiency in (0, 1].
    pub amp_efficiency: f64,
    pub circuit_power_dbm: f64,
    pub bs_power_dbm: f64,
    pub p_max_dbm: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_users: 4,
            num_layers: 2,
            bs_antennas: 64,
            user_antennas: 4,
            bandwidth_hz: 10e6,
            noise_dbm: -96.0,
            amp_efficiency: 0.2,
            circuit_power_dbm: 30.0,
            bs_power_dbm: 40.0,
            p_max_dbm: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarParams {
    pub enabled: bool,
    /// W/kg, shared by every user.
    pub budget: f64,
    /// `N x N` matrix as `[re, im]` rows; the reference head-phantom matrix
    /// (cropped to `N` antennas) when absent.
    pub matrix: Option<ComplexMatrixJson>,
}

impl Default for SarParams {
    fn default() -> Self {
        Self { enabled: true, budget: 0.8, matrix: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PMaxDbm,
    SarBudget,
    Layers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { axis: SweepAxis::PMaxDbm, values: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0] }
    }
}

/// Transmission schemes a sweep can run. Declaration order is the CSV order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rsma,
    Noma,
    Sdma,
    Fdma,
    Tdma,
    AdaptiveBackoff,
    WorstCaseBackoff,
}

impl Scheme {
    pub const MULTIPLE_ACCESS: [Scheme; 5] = [Self::Rsma, Self::Noma, Self::Sdma, Self::Fdma, Self::Tdma];
    pub const BACKOFF: [Scheme; 3] = [Self::Rsma, Self::AdaptiveBackoff, Self::WorstCaseBackoff];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rsma => "rsma",
            Self::Noma => "noma",
            Self::Sdma => "sdma",
            Self::Fdma => "fdma",
            Self::Tdma => "tdma",
            Self::AdaptiveBackoff => "adaptive_backoff",
            Self::WorstCaseBackoff => "worst_case_backoff",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OrderingChoice {
    Greedy,
    Exhaustive,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub sar: SarParams,
    /// Synthetic statistics; its `seed` is replaced by the experiment seed.
    pub generator: GeneratorParams,
    /// Statistics file; takes precedence over the generator.
    pub channel_file: Option<PathBuf>,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    pub ordering: OrderingChoice,
    /// Used with `ordering = "fixed"`; the identity order when absent.
    pub fixed_order: Option<DecodingOrder>,
    pub solver: SolverConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Channel draws for Monte-Carlo validation.
    pub samples: usize,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemParams::default(),
            sar: SarParams::default(),
            generator: GeneratorParams::default(),
            channel_file: None,
            sweep: Sweep::default(),
            schemes: vec![Scheme::Rsma],
            ordering: OrderingChoice::Greedy,
            fixed_order: None,
            solver: SolverConfig::default(),
            seed: 1,
            out_dir: PathBuf::from("results"),
            samples: rsma_core::montecarlo::DEFAULT_SAMPLES,
            workers: None,
        }
    }
}

/// Everything one sweep point needs.
#[derive(Clone, Debug)]
pub struct Point {
    pub value: f64,
    pub system: SystemConfig,
    pub constraints: SarConstraints,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        let s = &self.system;
        if !(s.amp_efficiency > 0.0 && s.amp_efficiency < 1.0) {
            return bad("amp_efficiency must lie in (0, 1)");
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if self.sweep.values.windows(2).any(|w| w[0] > w[1]) {
            return bad("sweep values must be sorted");
        }
        match self.sweep.axis {
            SweepAxis::Layers => {
                if self.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                    return bad("layer counts must be positive integers");
                }
            }
            SweepAxis::SarBudget => {
                if self.sweep.values.iter().any(|v| *v <= 0.0) {
                    return bad("SAR budgets must be positive");
                }
            }
            SweepAxis::PMaxDbm => {}
        }
        if self.samples == 0 {
            return bad("samples must be positive");
        }
        if self.workers == Some(0) {
            return bad("workers must be positive");
        }
        self.solver.validate()?;
        self.system_at(self.base_value())?.validate()?;
        Ok(())
    }

    /// Value of the sweep axis in the base system.
    pub fn base_value(&self) -> f64 {
        match self.sweep.axis {
            SweepAxis::PMaxDbm => self.system.p_max_dbm,
            SweepAxis::SarBudget => self.sar.budget,
            SweepAxis::Layers => self.system.num_layers as f64,
        }
    }

    /// System constants with the sweep axis set to `value`.
    pub fn system_at(&self, value: f64) -> Result<SystemConfig> {
        let s = &self.system;
        let mut p_max = s.p_max_dbm;
        let mut layers = s.num_layers;
        match self.sweep.axis {
            SweepAxis::PMaxDbm => p_max = value,
            SweepAxis::Layers => layers = value as usize,
            SweepAxis::SarBudget => {}
        }
        let config = SystemConfig::uniform(
            s.num_users,
            layers,
            s.bs_antennas,
            s.user_antennas,
            s.bandwidth_hz,
            dbm_to_watts(s.noise_dbm),
            1.0 / s.amp_efficiency,
            dbm_to_watts(s.circuit_power_dbm),
            dbm_to_watts(s.bs_power_dbm),
            dbm_to_watts(p_max),
        );
        config.validate()?;
        Ok(config)
    }

    pub fn constraints_at(&self, value: f64) -> Result<SarConstraints> {
        let k = self.system.num_users;
        if !self.sar.enabled {
            return Ok(SarConstraints::none(k));
        }
        let budget = match self.sweep.axis {
            SweepAxis::SarBudget => value,
            _ => self.sar.budget,
        };
        let cons = match &self.sar.matrix {
            Some(m) => {
                let one = SarConstraint::new(channel::complex_from_json(m)?, budget)?;
                SarConstraints::new(vec![vec![one]; k])
            }
            None => SarConstraints::reference(k, self.system.user_antennas, budget)?,
        };
        Ok(cons)
    }

    pub fn point(&self, value: f64) -> Result<Point> {
        let system = self.system_at(value)?;
        let constraints = self.constraints_at(value)?;
        constraints.check_config(&system)?;
        Ok(Point { value, system, constraints })
    }

    /// Channel statistics shared by every sweep point.
    pub fn stats(&self) -> Result<ChannelStats> {
        let stats = match &self.channel_file {
            Some(path) => ChannelFile::load(path)?,
            None => {
                let params = GeneratorParams { seed: self.seed, ..self.generator.clone() };
                let s = &self.system;
                channel::generate_stats(&params, s.bs_antennas, &vec![s.user_antennas; s.num_users])?
            }
        };
        stats.check_config(&self.system_at(self.base_value())?)?;
        Ok(stats)
    }
}
