//! Energy-efficient transmit covariance design for uplink rate-splitting
//! multiple access with per-user power and exposure (SAR) budgets.
//!
//! The BS has `M` antennas; user `k` has `N_k` antennas and splits its
//! message into `L` layers, each with its own covariance `Q_{k,l}`. Rates
//! are evaluated with deterministic equivalents of the hardened ergodic
//! rates ([`de`]) and validated by sampling ([`montecarlo`]). The
//! [`optimizer`] maximizes bits per Joule for a fixed SIC order,
//! [`ordering`] chooses the order and [`baselines`] covers NOMA, SDMA,
//! FDMA, TDMA and the power-backoff comparators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod de;
pub mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod ordering;
pub mod rates;

pub use error::{Error, Result};
pub use model::{
    Block, ChannelStats, CovarianceSet, DecodingOrder, SarConstraint, SarConstraints, SystemConfig,
};
