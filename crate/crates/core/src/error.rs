use thiserror::Error;

/// Errors produced by model construction, simulation and post-processing.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid parameters or an invalid topology.
    #[error("configuration error: {0}")]
    Config(String),

    /// A problem without a solution (unbalanced injections, infeasible design).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Lyapunov certificates only exist for the per-unit consensus schemes.
    #[error("unsupported scheme for this operation: {0}")]
    UnsupportedScheme(String),

    /// The integrated state became non-finite.
    #[error("numerical divergence at t = {time} s: {detail}")]
    Divergence { time: f64, detail: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    /// Scenario or knowledge file did not match the schema.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Invariant(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::config(format!("{what}: expected length {expected}, got {got}")));
    }
    Ok(())
}
