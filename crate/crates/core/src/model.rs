//! System configuration, statistical channel model, decoding orders and the
//! deterministic maps (beam-domain second moments, power, exposure) that the
//! rest of the crate builds on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

pub use crate::linalg::dft_matrix;

/// Hermitian tolerance used when validating user-supplied matrices.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_CLAMP_TOL, 0)` are rounding noise and get clamped.
pub const PSD_CLAMP_TOL: f64 = 1e-8;
/// Relative slack tolerated by [`check_feasible`].
pub const FEASIBILITY_TOL: f64 = 1e-6;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Scalar system constants. Per-user vectors have length `num_users`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_users: usize,
    pub num_layers: usize,
    pub bs_antennas: usize,
    pub user_antennas: Vec<usize>,
    /// Hz.
    pub bandwidth: f64,
    /// Watts.
    pub noise_power: f64,
    /// Inverse power-amplifier efficiency, > 1.
    pub amp_inv_efficiency: Vec<f64>,
    /// Watts per user.
    pub circuit_power: Vec<f64>,
    /// Watts.
    pub bs_power: f64,
    /// Per-user transmit power budget in watts.
    pub power_budget: Vec<f64>,
}

impl SystemConfig {
    /// Homogeneous configuration where every user shares the same constants.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        num_users: usize,
        num_layers: usize,
        bs_antennas: usize,
        user_antennas: usize,
        bandwidth: f64,
        noise_power: f64,
        amp_inv_efficiency: f64,
        circuit_power: f64,
        bs_power: f64,
        power_budget: f64,
    ) -> Self {
        Self {
            num_users,
            num_layers,
            bs_antennas,
            user_antennas: vec![user_antennas; num_users],
            bandwidth,
            noise_power,
            amp_inv_efficiency: vec![amp_inv_efficiency; num_users],
            circuit_power: vec![circuit_power; num_users],
            bs_power,
            power_budget: vec![power_budget; num_users],
        }
    }

    /// The reference scenario: 4 users, 2 layers, 64 BS antennas, 4 user
    /// antennas, 10 MHz, -96 dBm noise, 20 % amplifier efficiency, 30 dBm
    /// per-user circuit power and 40 dBm at the BS.
    pub fn reference(power_budget_w: f64) -> Self {
        Self::uniform(
            4,
            2,
            64,
            4,
            10e6,
            dbm_to_watts(-96.0),
            5.0,
            dbm_to_watts(30.0),
            dbm_to_watts(40.0),
            power_budget_w,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_users;
        if k == 0 || self.num_layers == 0 || self.bs_antennas == 0 {
            return Err(Error::InvalidConfig(
                "num_users, num_layers and bs_antennas must be positive".into(),
            ));
        }
        for (name, len) in [
            ("user_antennas", self.user_antennas.len()),
            ("amp_inv_efficiency", self.amp_inv_efficiency.len()),
            ("circuit_power", self.circuit_power.len()),
            ("power_budget", self.power_budget.len()),
        ] {
            if len != k {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {len} entries, expected {k}"
                )));
            }
        }
        if self.user_antennas.contains(&0) {
            return Err(Error::InvalidConfig("user_antennas must be positive".into()));
        }
        if !(self.noise_power > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::InvalidConfig(
                "noise_power and bandwidth must be positive".into(),
            ));
        }
        if self.amp_inv_efficiency.iter().any(|&x| !(x > 1.0)) {
            return Err(Error::InvalidConfig(
                "amp_inv_efficiency must exceed 1".into(),
            ));
        }
        if self.power_budget.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidConfig("power budgets must be positive".into()));
        }
        if self.circuit_power.iter().any(|&p| !(p >= 0.0)) || !(self.bs_power >= 0.0) {
            return Err(Error::InvalidConfig(
                "circuit powers must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.num_users * self.num_layers
    }

    /// Same system with a different number of layers per user.
    pub fn with_layers(&self, num_layers: usize) -> Self {
        Self { num_layers, ..self.clone() }
    }

    pub fn with_power_budget(&self, watts: f64) -> Self {
        Self { power_budget: vec![watts; self.num_users], ..self.clone() }
    }

    pub fn with_power_budgets(&self, budgets: Vec<f64>) -> Self {
        Self { power_budget: budgets, ..self.clone() }
    }
}

/// Statistical CSI: beam-domain coupling matrices plus the eigen-bases.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    coupling: Vec<DMatrix<f64>>,
    bs_basis: CMat,
    user_basis: Vec<CMat>,
}

impl ChannelStats {
    pub fn new(coupling: Vec<DMatrix<f64>>, bs_basis: CMat, user_basis: Vec<CMat>) -> Result<Self> {
        if coupling.is_empty() {
            return Err(Error::Dimension("no users".into()));
        }
        if coupling.len() != user_basis.len() {
            return Err(Error::Dimension(format!(
                "{} coupling matrices but {} user bases",
                coupling.len(),
                user_basis.len()
            )));
        }
        let m = bs_basis.nrows();
        if bs_basis.ncols() != m {
            return Err(Error::Dimension("BS basis must be square".into()));
        }
        let dev = linalg::unitary_deviation(&bs_basis);
        if dev > 1e-10 {
            return Err(Error::NotUnitary { deviation: dev });
        }
        for (k, (omega, v)) in coupling.iter().zip(&user_basis).enumerate() {
            if omega.nrows() != m {
                return Err(Error::Dimension(format!(
                    "coupling of user {k} has {} rows, expected {m}",
                    omega.nrows()
                )));
            }
            if v.nrows() != omega.ncols() || v.ncols() != omega.ncols() {
                return Err(Error::Dimension(format!(
                    "user basis {k} must be {n}x{n}",
                    n = omega.ncols()
                )));
            }
            if omega.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "coupling of user {k} has negative or non-finite entries"
                )));
            }
            let dev = linalg::unitary_deviation(v);
            if dev > 1e-10 {
                return Err(Error::NotUnitary { deviation: dev });
            }
        }
        Ok(Self { coupling, bs_basis, user_basis })
    }

    /// DFT bases on both sides.
    pub fn with_dft(coupling: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = coupling.first().map(|o| o.nrows()).unwrap_or(0);
        let user_basis = coupling.iter().map(|o| dft_matrix(o.ncols())).collect();
        Self::new(coupling, dft_matrix(m), user_basis)
    }

    pub fn num_users(&self) -> usize {
        self.coupling.len()
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_basis.nrows()
    }

    pub fn user_antennas(&self, k: usize) -> usize {
        self.coupling[k].ncols()
    }

    pub fn coupling(&self, k: usize) -> &DMatrix<f64> {
        &self.coupling[k]
    }

    pub fn bs_basis(&self) -> &CMat {
        &self.bs_basis
    }

    pub fn user_basis(&self, k: usize) -> &CMat {
        &self.user_basis[k]
    }

    /// Same bases, coupling of every user multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coupling: self.coupling.iter().map(|o| o * factor).collect(),
            ..self.clone()
        }
    }

    /// Keeps only the listed users, in the given order.
    pub fn subset(&self, users: &[usize]) -> Self {
        Self {
            coupling: users.iter().map(|&k| self.coupling[k].clone()).collect(),
            bs_basis: self.bs_basis.clone(),
            user_basis: users.iter().map(|&k| self.user_basis[k].clone()).collect(),
        }
    }

    pub fn check_config(&self, config: &SystemConfig) -> Result<()> {
        if self.num_users() != config.num_users || self.bs_antennas() != config.bs_antennas {
            return Err(Error::Dimension(format!(
                "channel statistics describe {} users / {} BS antennas, config has {} / {}",
                self.num_users(),
                self.bs_antennas(),
                config.num_users,
                config.bs_antennas
            )));
        }
        for k in 0..config.num_users {
            if self.user_antennas(k) != config.user_antennas[k] {
                return Err(Error::Dimension(format!("antenna count mismatch for user {k}")));
            }
        }
        Ok(())
    }
}

/// One quadratic exposure constraint `sum_l tr(R Q_l) <= budget`.
#[derive(Clone, Debug)]
pub struct SarConstraint {
    matrix: CMat,
    /// W/kg.
    pub budget: f64,
}

impl SarConstraint {
    pub fn new(matrix: CMat, budget: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension("SAR matrix must be square".into()));
        }
        let dev = linalg::hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        if !(budget > 0.0) {
            return Err(Error::InvalidConfig("SAR budget must be positive".into()));
        }
        let herm = linalg::hermitize(&matrix);
        let min_eig = linalg::min_eigenvalue(&herm);
        if min_eig < -PSD_CLAMP_TOL {
            return Err(Error::NotPsd { min_eigenvalue: min_eig });
        }
        let matrix = if min_eig < 0.0 { linalg::psd_project(&herm) } else { herm };
        Ok(Self { matrix, budget })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self { matrix: self.matrix.clone(), budget }
    }
}

/// The 4x4 head-phantom SAR matrix used in the reference scenario (1/kg).
pub fn reference_sar_matrix() -> CMat {
    use num_complex::Complex64 as C;
    let z = C::new(0.0, 0.0);
    let d = C::new(8.0, 0.0);
    let a = C::new(0.0, -6.0);
    let b = C::new(-2.1, 0.0);
    let rows = [
        [d, a, b, z],
        [a.conj(), d, a, b],
        [b, a.conj(), d, a],
        [z, b, a.conj(), d],
    ];
    CMat::from_fn(4, 4, |i, j| rows[i][j])
}

/// Exposure constraints of every user (`A_k` entries for user `k`).
#[derive(Clone, Debug, Default)]
pub struct SarConstraints {
    per_user: Vec<Vec<SarConstraint>>,
}

impl SarConstraints {
    pub fn new(per_user: Vec<Vec<SarConstraint>>) -> Self {
        Self { per_user }
    }

    /// No exposure limits at all.
    pub fn none(num_users: usize) -> Self {
        Self { per_user: vec![Vec::new(); num_users] }
    }

    /// Every user gets the same single constraint.
    pub fn uniform(num_users: usize, matrix: CMat, budget: f64) -> Result<Self> {
        let one = SarConstraint::new(matrix, budget)?;
        Ok(Self { per_user: vec![vec![one]; num_users] })
    }

    /// Reference SAR matrix cropped to its leading `n x n` block.
    pub fn reference(num_users: usize, user_antennas: usize, budget: f64) -> Result<Self> {
        let full = reference_sar_matrix();
        let n = user_antennas.min(4);
        if user_antennas > 4 {
            return Err(Error::Dimension(
                "the reference SAR matrix only covers 4 antennas".into(),
            ));
        }
        Self::uniform(num_users, full.view((0, 0), (n, n)).into_owned(), budget)
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn user(&self, k: usize) -> &[SarConstraint] {
        &self.per_user[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<SarConstraint>> {
        self.per_user.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.per_user.iter().all(|c| c.is_empty())
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self {
            per_user: self
                .per_user
                .iter()
                .map(|cs| cs.iter().map(|c| c.with_budget(budget)).collect())
                .collect(),
        }
    }

    pub fn subset(&self, users: &[usize]) -> Self {
        Self { per_user: users.iter().map(|&k| self.per_user[k].clone()).collect() }
    }

    pub fn check_config(&self, config: &SystemConfig) -> Result<()> {
        if self.per_user.len() != config.num_users {
            return Err(Error::Dimension(format!(
                "SAR constraints for {} users, config has {}",
                self.per_user.len(),
                config.num_users
            )));
        }
        for (k, cs) in self.per_user.iter().enumerate() {
            for c in cs {
                if c.matrix.nrows() != config.user_antennas[k] {
                    return Err(Error::Dimension(format!("SAR matrix size mismatch for user {k}")));
                }
            }
        }
        Ok(())
    }
}

/// A (user, layer) pair; both zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    pub user: usize,
    pub layer: usize,
}

impl Block {
    pub fn new(user: usize, layer: usize) -> Self {
        Self { user, layer }
    }

    pub fn index(&self, num_layers: usize) -> usize {
        self.user * num_layers + self.layer
    }

    pub fn from_index(index: usize, num_layers: usize) -> Self {
        Self { user: index / num_layers, layer: index % num_layers }
    }
}

/// SIC decoding order: a bijection from (user, layer) pairs onto ranks `1..=K*L`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "OrderRepr", into = "OrderRepr")]
pub struct DecodingOrder {
    num_users: usize,
    num_layers: usize,
    /// Blocks in decoding sequence (first decoded first).
    sequence: Vec<Block>,
    /// 1-based rank per flat block index.
    ranks: Vec<usize>,
}

/// Serialized form: block sequence in decoding order.
#[derive(Clone, Serialize, Deserialize)]
struct OrderRepr {
    num_users: usize,
    num_layers: usize,
    sequence: Vec<Block>,
}

impl TryFrom<OrderRepr> for DecodingOrder {
    type Error = Error;

    fn try_from(r: OrderRepr) -> Result<Self> {
        Self::from_sequence(r.num_users, r.num_layers, r.sequence)
    }
}

impl From<DecodingOrder> for OrderRepr {
    fn from(o: DecodingOrder) -> Self {
        Self { num_users: o.num_users, num_layers: o.num_layers, sequence: o.sequence }
    }
}

impl DecodingOrder {
    pub fn from_sequence(num_users: usize, num_layers: usize, sequence: Vec<Block>) -> Result<Self> {
        let n = num_users * num_layers;
        if sequence.len() != n {
            return Err(Error::InvalidOrder(format!(
                "expected {n} entries, got {}",
                sequence.len()
            )));
        }
        let mut ranks = vec![0usize; n];
        for (pos, b) in sequence.iter().enumerate() {
            if b.user >= num_users || b.layer >= num_layers {
                return Err(Error::InvalidOrder(format!("block {b:?} out of range")));
            }
            let idx = b.index(num_layers);
            if ranks[idx] != 0 {
                return Err(Error::InvalidOrder(format!("block {b:?} appears twice")));
            }
            ranks[idx] = pos + 1;
        }
        Ok(Self { num_users, num_layers, sequence, ranks })
    }

    /// Builds the order from 1-based ranks indexed by flat block index.
    pub fn from_ranks(num_users: usize, num_layers: usize, ranks: Vec<usize>) -> Result<Self> {
        let n = num_users * num_layers;
        if ranks.len() != n {
            return Err(Error::InvalidOrder(format!("expected {n} ranks, got {}", ranks.len())));
        }
        let mut sequence = vec![None; n];
        for (idx, &r) in ranks.iter().enumerate() {
            if r == 0 || r > n {
                return Err(Error::InvalidOrder(format!("rank {r} outside 1..={n}")));
            }
            if sequence[r - 1].is_some() {
                return Err(Error::InvalidOrder(format!("rank {r} used twice")));
            }
            sequence[r - 1] = Some(Block::from_index(idx, num_layers));
        }
        let sequence = sequence.into_iter().map(|b| b.expect("bijection")).collect();
        Ok(Self { num_users, num_layers, sequence, ranks })
    }

    /// All layers of each user contiguous, users in the given order.
    pub fn user_major(user_order: &[usize], num_layers: usize) -> Result<Self> {
        let seq = user_order
            .iter()
            .flat_map(|&k| (0..num_layers).map(move |l| Block::new(k, l)))
            .collect();
        Self::from_sequence(user_order.len(), num_layers, seq)
    }

    pub fn identity(num_users: usize, num_layers: usize) -> Self {
        let users: Vec<usize> = (0..num_users).collect();
        Self::user_major(&users, num_layers).expect("identity order is valid")
    }

    pub fn reversed(&self) -> Self {
        let mut seq = self.sequence.clone();
        seq.reverse();
        Self::from_sequence(self.num_users, self.num_layers, seq).expect("reversal preserves validity")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn sequence(&self) -> &[Block] {
        &self.sequence
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn rank(&self, b: Block) -> usize {
        self.ranks[b.index(self.num_layers)]
    }

    /// Pairs decoded after `b`; they interfere when `b` is decoded.
    pub fn interferers(&self, b: Block) -> Vec<Block> {
        let r = self.rank(b);
        self.sequence[r..].to_vec()
    }

    /// Pairs decoded before `b` (already cancelled when `b` is decoded).
    pub fn decoded_before(&self, b: Block) -> Vec<Block> {
        let r = self.rank(b);
        self.sequence[..r - 1].to_vec()
    }

    /// Order of users by their first appearance in the sequence.
    pub fn user_sequence(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_users];
        let mut out = Vec::with_capacity(self.num_users);
        for b in &self.sequence {
            if !seen[b.user] {
                seen[b.user] = true;
                out.push(b.user);
            }
        }
        out
    }
}

/// Transmit covariances `Q_{k,l}`, stored user-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSet {
    num_layers: usize,
    blocks: Vec<CMat>,
}

impl CovarianceSet {
    /// Validates Hermitian symmetry and positive semidefiniteness, clamping
    /// rounding-level negative eigenvalues.
    pub fn new(num_layers: usize, blocks: Vec<CMat>) -> Result<Self> {
        let raw = Self::new_unchecked(num_layers, blocks)?;
        let mut out = Vec::with_capacity(raw.blocks.len());
        for q in raw.blocks {
            let scale = linalg::max_abs(&q).max(1.0);
            let dev = linalg::hermitian_deviation(&q);
            if dev > HERMITIAN_TOL * scale {
                return Err(Error::NotHermitian { deviation: dev });
            }
            let herm = linalg::hermitize(&q);
            let min_eig = linalg::min_eigenvalue(&herm);
            if min_eig < -PSD_CLAMP_TOL {
                return Err(Error::NotPsd { min_eigenvalue: min_eig });
            }
            out.push(if min_eig < 0.0 { linalg::psd_project(&herm) } else { herm });
        }
        Ok(Self { num_layers, blocks: out })
    }

    /// Shape checks only; used to audit candidate solutions.
    pub fn new_unchecked(num_layers: usize, blocks: Vec<CMat>) -> Result<Self> {
        if num_layers == 0 || blocks.is_empty() || !blocks.len().is_multiple_of(num_layers) {
            return Err(Error::Dimension(format!(
                "{} blocks is not a positive multiple of {num_layers} layers",
                blocks.len()
            )));
        }
        for (i, q) in blocks.iter().enumerate() {
            if q.nrows() != q.ncols() {
                return Err(Error::Dimension(format!("block {i} is not square")));
            }
        }
        for k in 0..blocks.len() / num_layers {
            let n = blocks[k * num_layers].nrows();
            if (0..num_layers).any(|l| blocks[k * num_layers + l].nrows() != n) {
                return Err(Error::Dimension(format!("layers of user {k} differ in size")));
            }
        }
        Ok(Self { num_layers, blocks })
    }

    pub fn zeros(config: &SystemConfig) -> Self {
        Self::scaled_identity(config, &vec![0.0; config.num_users])
    }

    /// `Q_{k,l} = c_k I` for every layer.
    pub fn scaled_identity(config: &SystemConfig, levels: &[f64]) -> Self {
        let blocks = (0..config.num_users)
            .flat_map(|k| {
                let n = config.user_antennas[k];
                let q = CMat::identity(n, n) * linalg::c(levels[k]);
                std::iter::repeat_n(q, config.num_layers)
            })
            .collect();
        Self { num_layers: config.num_layers, blocks }
    }

    pub fn num_users(&self) -> usize {
        self.blocks.len() / self.num_layers
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn get(&self, b: Block) -> &CMat {
        &self.blocks[b.index(self.num_layers)]
    }

    pub fn block(&self, index: usize) -> &CMat {
        &self.blocks[index]
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<CMat> {
        self.blocks
    }

    pub fn user_layers(&self, k: usize) -> &[CMat] {
        &self.blocks[k * self.num_layers..(k + 1) * self.num_layers]
    }

    /// `sum_l tr(Q_{k,l})`.
    pub fn user_power(&self, k: usize) -> f64 {
        self.user_layers(k).iter().map(linalg::trace_re).sum()
    }

    /// Sum of the layer covariances of user `k`.
    pub fn user_total(&self, k: usize) -> CMat {
        let layers = self.user_layers(k);
        let mut acc = CMat::zeros(layers[0].nrows(), layers[0].ncols());
        for q in layers {
            acc += q;
        }
        acc
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            num_layers: self.num_layers,
            blocks: self.blocks.iter().map(|q| q * linalg::c(factor)).collect(),
        }
    }

    /// Multiplies every layer of user `k` by `factors[k]`.
    pub fn scale_users(&self, factors: &[f64]) -> Self {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, q)| q * linalg::c(factors[i / self.num_layers]))
            .collect();
        Self { num_layers: self.num_layers, blocks }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|q| linalg::max_abs(q) == 0.0)
    }

    fn check_shapes(&self, config: &SystemConfig) -> Result<()> {
        if self.num_layers != config.num_layers || self.num_users() != config.num_users {
            return Err(Error::Dimension(format!(
                "covariance set has {} users x {} layers, config has {} x {}",
                self.num_users(),
                self.num_layers,
                config.num_users,
                config.num_layers
            )));
        }
        for k in 0..config.num_users {
            if self.blocks[k * self.num_layers].nrows() != config.user_antennas[k] {
                return Err(Error::Dimension(format!("covariance size mismatch for user {k}")));
            }
        }
        Ok(())
    }
}

/// Diagonal of `E{H~_k V_k^H X V_k H~_k^H}` (length `M`):
/// `[.]_i = sum_j [Omega_k]_ij [V_k^H X V_k]_jj`.
pub fn theta_tilde(stats: &ChannelStats, k: usize, x: &CMat) -> Result<DVector<f64>> {
    let n = stats.user_antennas(k);
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!(
            "theta_tilde expects a {n}x{n} matrix for user {k}, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let d = linalg::diag_of_congruence(stats.user_basis(k), x);
    Ok(stats.coupling(k) * d)
}

/// Diagonal of `E{H~_k^H X H~_k}` (length `N_k`): `[.]_jj = sum_i [Omega_k]_ij [X]_ii`.
pub fn theta(stats: &ChannelStats, k: usize, x: &CMat) -> Result<DVector<f64>> {
    let m = stats.bs_antennas();
    if x.nrows() != m || x.ncols() != m {
        return Err(Error::Dimension(format!(
            "theta expects a {m}x{m} matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let diag = DVector::from_iterator(m, (0..m).map(|i| x[(i, i)].re));
    Ok(theta_of_diagonal(stats, k, &diag))
}

/// [`theta`] for an argument that is already diagonal, given by its diagonal.
pub fn theta_of_diagonal(stats: &ChannelStats, k: usize, diag: &DVector<f64>) -> DVector<f64> {
    stats.coupling(k).tr_mul(diag)
}

/// `V_k diag(Omega_k^T d) V_k^H`: the user-side image of a diagonal BS-side weight.
pub fn user_side_weight(stats: &ChannelStats, k: usize, diag: &DVector<f64>) -> CMat {
    linalg::conj_diag(stats.user_basis(k), &theta_of_diagonal(stats, k, diag))
}

/// Noise plus interference covariance (diagonal, beam domain) seen when a
/// block is decoded with the given interferers.
pub fn interference_diag(
    stats: &ChannelStats,
    q: &CovarianceSet,
    interferers: &[Block],
    noise_power: f64,
) -> DVector<f64> {
    let mut acc = DVector::from_element(stats.bs_antennas(), noise_power);
    for &b in interferers {
        let contrib = theta_tilde(stats, b.user, q.get(b)).expect("shapes validated by caller");
        acc += contrib;
    }
    acc
}

/// `K_{k,l} = sigma^2 I + sum over pairs decoded after (k,l) of theta_tilde_p(Q_{p,q})`,
/// returned as its diagonal.
pub fn interference_cov(
    config: &SystemConfig,
    stats: &ChannelStats,
    q: &CovarianceSet,
    order: &DecodingOrder,
    target: Block,
) -> Result<DVector<f64>> {
    q.check_shapes(config)?;
    stats.check_config(config)?;
    if order.num_users() != config.num_users || order.num_layers() != config.num_layers {
        return Err(Error::InvalidOrder("order does not match the configuration".into()));
    }
    Ok(interference_diag(stats, q, &order.interferers(target), config.noise_power))
}

/// `sum_k (xi_k sum_l tr(Q_{k,l}) + P_{c,k}) + P_BS` in watts.
pub fn power_consumption(config: &SystemConfig, q: &CovarianceSet) -> f64 {
    let users = q.num_users().min(config.num_users);
    let dynamic: f64 = (0..users)
        .map(|k| config.amp_inv_efficiency[k] * q.user_power(k) + config.circuit_power[k])
        .sum();
    dynamic + config.bs_power
}

/// `SAR_{k,a} = sum_l tr(R_{k,a} Q_{k,l})` in W/kg; rounding-level negatives clamp to 0.
pub fn sar_values(constraints: &SarConstraints, q: &CovarianceSet) -> Vec<Vec<f64>> {
    constraints
        .iter()
        .enumerate()
        .map(|(k, cs)| {
            cs.iter()
                .map(|c| {
                    let v: f64 = q
                        .user_layers(k)
                        .iter()
                        .map(|ql| linalg::trace_product_re(c.matrix(), ql))
                        .sum();
                    if v < 0.0 && v > -1e-9 { 0.0 } else { v }
                })
                .collect()
        })
        .collect()
}

/// Slack of every constraint of the inner problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `P_max,k - sum_l tr(Q_{k,l})` per user (W).
    pub power_slack: Vec<f64>,
    /// `D_{k,a} - SAR_{k,a}` per user and region (W/kg).
    pub sar_slack: Vec<Vec<f64>>,
    /// Smallest eigenvalue of each `Q_{k,l}`, user-major.
    pub min_eigenvalues: Vec<f64>,
    pub power_ok: bool,
    pub sar_ok: bool,
    pub psd_ok: bool,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Smallest power slack relative to its budget.
    pub fn min_relative_power_slack(&self, config: &SystemConfig) -> f64 {
        self.power_slack
            .iter()
            .zip(&config.power_budget)
            .map(|(s, p)| s / p)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest SAR slack relative to its budget (`+inf` without SAR constraints).
    pub fn min_relative_sar_slack(&self, constraints: &SarConstraints) -> f64 {
        self.sar_slack
            .iter()
            .zip(constraints.iter())
            .flat_map(|(ss, cs)| ss.iter().zip(cs).map(|(s, c)| s / c.budget))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn check_feasible(
    config: &SystemConfig,
    constraints: &SarConstraints,
    q: &CovarianceSet,
) -> FeasibilityReport {
    let power_slack: Vec<f64> = (0..q.num_users())
        .map(|k| config.power_budget[k] - q.user_power(k))
        .collect();
    let sar = sar_values(constraints, q);
    let sar_slack: Vec<Vec<f64>> = sar
        .iter()
        .zip(constraints.iter())
        .map(|(vals, cs)| vals.iter().zip(cs).map(|(v, c)| c.budget - v).collect())
        .collect();
    let min_eigenvalues: Vec<f64> = q.blocks().iter().map(linalg::min_eigenvalue).collect();
    let power_ok = power_slack
        .iter()
        .zip(&config.power_budget)
        .all(|(s, p)| *s >= -FEASIBILITY_TOL * p);
    let sar_ok = sar_slack
        .iter()
        .zip(constraints.iter())
        .all(|(ss, cs)| ss.iter().zip(cs).all(|(s, c)| *s >= -FEASIBILITY_TOL * c.budget));
    let psd_ok = min_eigenvalues.iter().all(|&e| e >= -PSD_CLAMP_TOL);
    FeasibilityReport {
        power_slack,
        sar_slack,
        min_eigenvalues,
        power_ok,
        sar_ok,
        psd_ok,
        feasible: power_ok && sar_ok && psd_ok,
    }
}
