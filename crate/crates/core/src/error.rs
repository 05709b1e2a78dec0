use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid decoding order: {0}")]
    InvalidOrder(String),

    #[error("deterministic-equivalent iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    DeNotConverged { iterations: usize, residual: f64 },

    #[error("exhaustive search over {count} permutations exceeds the cap of {cap}; use the greedy order instead")]
    SearchTooLarge { count: u128, cap: u128 },

    #[error("channel statistics file: {0}")]
    ChannelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
