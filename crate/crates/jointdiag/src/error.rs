use thiserror::Error;

/// Errors produced by model construction, sampling and diagnostics.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("rank-deficient input: {0}")]
    RankDeficient(String),

    #[error("non-positive value where a positive one is required: {0}")]
    NonPositive(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rejection sampler exceeded {0} consecutive rejections")]
    RejectionOverflow(u64),

    #[error("non-finite log-likelihood at chain {chain}, iteration {iter}")]
    NonFiniteLogLik {
        chain: usize,
        iter: usize,
        /// JSON dump of the state that produced the non-finite value.
        state_dump: String,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
