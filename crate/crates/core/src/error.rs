use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The random policy is already optimal under this reward but the
    /// evaluated policy is not, so the normalized regret is undefined.
    #[error("degenerate nEVD normalizer (optimal and random returns coincide)")]
    DegenerateNormalizer,

    #[error("degenerate baseline (baseline return is numerically zero)")]
    DegenerateBaseline,

    #[error("demonstration stream exhausted")]
    StreamExhausted,

    #[error("MCMC budget exceeded after {iterations} iterations ({retained} samples retained)")]
    BudgetExceeded {
        iterations: usize,
        retained: usize,
        /// Retained samples so far, as plain weight vectors.
        partial: Vec<Vec<f64>>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Format(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
