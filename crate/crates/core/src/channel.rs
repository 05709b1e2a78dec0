//! Channel statistics sources: a seeded synthetic beam-domain profile and a
//! JSON file format.
//!
//! File layout (all fields optional except that either `coupling` or
//! `generator` must be present):
//!
//! ```json
//! {
//!   "coupling":   [ [[row0...], [row1...]], ... ],   // one M x N_k matrix per user, row-major
//!   "bs_basis":   [[[re, im], ...], ...],            // M x M, defaults to the DFT
//!   "user_basis": [ [[[re, im], ...], ...], ... ],   // N_k x N_k per user, defaults to the DFT
//!   "generator":  { "num_users": 4, "bs_antennas": 64, "user_antennas": 4, "seed": 7, ... }
//! }
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dft_matrix, CMat};
use crate::model::ChannelStats;

/// Complex matrix as rows of `[re, im]` pairs.
pub type ComplexMatrixJson = Vec<Vec<[f64; 2]>>;

pub fn complex_to_json(m: &CMat) -> ComplexMatrixJson {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn complex_from_json(rows: &ComplexMatrixJson) -> Result<CMat> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::ChannelFile("ragged complex matrix".into()));
    }
    Ok(CMat::from_fn(r, c, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

fn real_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::ChannelFile("coupling matrix must be a non-empty rectangle".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Parameters of the synthetic coupling generator.
///
/// Each user sees a contiguous band of `band_width` dominant BS beams
/// (wrapping around the beam index) whose strength decays as
/// `exp(-decay * offset_in_band)`; beams outside the band sit at `floor`
/// relative strength. Columns carry a random per-eigendirection weight.
/// Every `Omega_k` is scaled so its entries sum to `M * N_k * g_k` with
/// `g_k = 10^(-(pathloss_db - gain_offset_db[k]) / 10)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub seed: u64,
    pub decay: f64,
    /// Defaults to `M / 4` when zero.
    pub band_width: usize,
    /// Per-user band start; random when absent.
    pub band_offsets: Option<Vec<usize>>,
    pub pathloss_db: f64,
    pub floor: f64,
    /// Extra per-user gain in dB (0 when absent).
    pub gain_offsets_db: Option<Vec<f64>>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            seed: 1,
            decay: 0.15,
            band_width: 0,
            band_offsets: None,
            pathloss_db: 120.0,
            floor: 1e-3,
            gain_offsets_db: None,
        }
    }
}

/// Draws one coupling matrix per user.
pub fn generate_coupling(
    params: &GeneratorParams,
    bs_antennas: usize,
    user_antennas: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    let k_users = user_antennas.len();
    let m = bs_antennas;
    if m == 0 || k_users == 0 || user_antennas.contains(&0) {
        return Err(Error::InvalidConfig("generator needs positive dimensions".into()));
    }
    if let Some(offs) = &params.band_offsets {
        if offs.len() != k_users {
            return Err(Error::InvalidConfig("band_offsets length must equal num_users".into()));
        }
    }
    if let Some(g) = &params.gain_offsets_db {
        if g.len() != k_users {
            return Err(Error::InvalidConfig("gain_offsets_db length must equal num_users".into()));
        }
    }
    if !(params.decay >= 0.0) || !(params.floor >= 0.0) {
        return Err(Error::InvalidConfig("decay and floor must be non-negative".into()));
    }
    let width = if params.band_width == 0 { (m / 4).max(1) } else { params.band_width.min(m) };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(k_users);
    for (k, &n) in user_antennas.iter().enumerate() {
        let offset = match &params.band_offsets {
            Some(o) => o[k] % m,
            None => rng.random_range(0..m),
        };
        let mut profile = vec![params.floor; m];
        for step in 0..width {
            profile[(offset + step) % m] = (-params.decay * step as f64).exp();
        }
        let col_weight: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut omega = DMatrix::from_fn(m, n, |i, j| {
            profile[i] * col_weight[j] * rng.random_range(0.75..1.25)
        });
        let gain_db = params.gain_offsets_db.as_ref().map(|g| g[k]).unwrap_or(0.0);
        let g = 10f64.powf(-(params.pathloss_db - gain_db) / 10.0);
        let total: f64 = omega.sum();
        omega *= (m * n) as f64 * g / total;
        out.push(omega);
    }
    Ok(out)
}

/// Synthetic statistics with DFT bases.
pub fn generate_stats(
    params: &GeneratorParams,
    bs_antennas: usize,
    user_antennas: &[usize],
) -> Result<ChannelStats> {
    ChannelStats::with_dft(generate_coupling(params, bs_antennas, user_antennas)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub num_users: usize,
    pub bs_antennas: usize,
    pub user_antennas: usize,
    #[serde(flatten)]
    pub params: GeneratorParams,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_basis: Option<ComplexMatrixJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_basis: Option<Vec<ComplexMatrixJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl ChannelFile {
    pub fn from_stats(stats: &ChannelStats) -> Self {
        let coupling = (0..stats.num_users())
            .map(|k| {
                let o = stats.coupling(k);
                (0..o.nrows()).map(|i| o.row(i).iter().copied().collect()).collect()
            })
            .collect();
        Self {
            coupling: Some(coupling),
            bs_basis: Some(complex_to_json(stats.bs_basis())),
            user_basis: Some((0..stats.num_users()).map(|k| complex_to_json(stats.user_basis(k))).collect()),
            generator: None,
        }
    }

    pub fn into_stats(self) -> Result<ChannelStats> {
        let coupling = match (self.coupling, self.generator) {
            (Some(rows), _) => rows.iter().map(|r| real_from_rows(r)).collect::<Result<Vec<_>>>()?,
            (None, Some(g)) => generate_coupling(
                &g.params,
                g.bs_antennas,
                &vec![g.user_antennas; g.num_users],
            )?,
            (None, None) => {
                return Err(Error::ChannelFile("need either `coupling` or `generator`".into()))
            }
        };
        let m = coupling[0].nrows();
        let bs_basis = match self.bs_basis {
            Some(b) => complex_from_json(&b)?,
            None => dft_matrix(m),
        };
        let user_basis = match self.user_basis {
            Some(list) => list.iter().map(complex_from_json).collect::<Result<Vec<_>>>()?,
            None => coupling.iter().map(|o| dft_matrix(o.ncols())).collect(),
        };
        ChannelStats::new(coupling, bs_basis, user_basis)
    }

    pub fn load(path: &Path) -> Result<ChannelStats> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ChannelFile(format!("{}: {e}", path.display())))?;
        let file: ChannelFile =
            serde_json::from_str(&text).map_err(|e| Error::ChannelFile(e.to_string()))?;
        file.into_stats()
    }
}
