use thiserror::Error;

/// Errors raised by the simulation and inference layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("degenerate environment: {0}")]
    DegenerateEnvironment(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("quadrature did not converge: error estimate {estimate:e} at order {order}")]
    Precision { order: usize, estimate: f64 },

    #[error("population overflow in exact mode at generation {generation}")]
    Overflow { generation: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("unknown {what} `{name}` (known: {known})")]
    Unknown {
        what: &'static str,
        name: String,
        known: String,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{0}")]
    Refused(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
