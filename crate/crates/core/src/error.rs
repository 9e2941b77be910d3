use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid channel sample")]
    InvalidChannel,

    #[error("domain error: {0}")]
    Domain(String),

    /// The requested upper incomplete gamma value exceeds Γ(a): the cutoff
    /// collapses to zero and the regime is outage free.
    #[error("no finite threshold")]
    NoFiniteThreshold,

    #[error("infeasible power budget: {0}")]
    InfeasiblePower(String),

    #[error("too few samples: got {got}, need at least {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("root bracket not found: {0}")]
    Bracket(String),

    #[error("SNR too low for joint scheme (alpha * p_av = {0} <= e)")]
    SnrTooLow(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
