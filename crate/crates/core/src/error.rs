use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller input: wrong dimension, out-of-range parameter, unknown name.
    #[error("invalid input: {0}")]
    Input(String),

    /// A drift/diffusion evaluation produced a non-finite value.
    #[error("non-finite coefficient value at sample {sample}: {what}")]
    Evaluation { sample: usize, what: String },

    /// The user-supplied model broke one of its own contracts (e.g. delay out of range).
    #[error("model violation: {0}")]
    Model(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("state became non-finite at step {step}")]
    Overflow { step: usize },

    #[error("implicit solve did not converge at step {step} (residual {residual:e})")]
    Convergence { step: usize, residual: f64 },

    #[error("grid rejected: L*theta*delta = {product} must be < 1")]
    GridRejected { product: f64 },

    #[error("numerically degenerate certificate problem (spectral abscissa {abscissa:e})")]
    NumericalDegeneracy { abscissa: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("every path diverged by step {step}")]
    Estimation { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
