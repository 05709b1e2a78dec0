//! Covariance design for a fixed decoding order.

pub mod dual;
pub mod mm;
mod solver;
pub mod waterfill;

pub use dual::{dual_step, DualMethod, DualOptions, DualState};
pub use mm::{auxiliary_s, dinkelbach_eta, mm_gradients, mm_gradients_for, surrogate_objective, AuxiliaryMatrix, MmGradients};
pub use solver::{
    initial_covariances, max_violation, solve_inner, solve_model, InnerSolution, IterationCounts, Objective,
    SolverConfig, SolverTrace, TraceRow,
};
pub use waterfill::{water_fill, water_fill_objective};
