use thiserror::Error;

/// Errors raised by the estimators, GNSS model, ingestion and scoring layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, index ranges, sign constraints).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical operation failed (non-finite values, factorization failure, lost definiteness).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Wraps an error with the epoch at which it occurred.
    #[error("epoch {epoch}: {source}")]
    AtEpoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("under-determined: {available} usable {kind} measurements, need at least {required}")]
    UnderDetermined {
        kind: &'static str,
        available: usize,
        required: usize,
    },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("schema error: missing columns {missing:?}")]
    Schema { missing: Vec<String> },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("duplicate row for utc_ms={utc_ms}, sat_id={sat_id}")]
    DuplicateRow { utc_ms: i64, sat_id: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Attaches an epoch index, leaving already-tagged errors alone.
    pub fn at_epoch(self, epoch: usize) -> Self {
        match self {
            e @ Error::AtEpoch { .. } => e,
            e => Error::AtEpoch {
                epoch,
                source: Box::new(e),
            },
        }
    }
}
