use thiserror::Error;

/// Errors produced by the assessment engine, scorers, models and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A record or file does not match the declared feature schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A value lies outside its declared domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A ratio would divide by a (numerically) zero reward.
    #[error("singularity: {0}")]
    Singularity(String),

    /// Target discretization produced a single distinct value.
    #[error("degenerate buckets: {0}")]
    DegenerateBuckets(String),

    /// A predictor failed on one of the probes generated for a trace.
    #[error("scorer failed on probe {probe}: {source}")]
    Scorer {
        probe: String,
        #[source]
        source: Box<Error>,
    },

    /// Failure while processing a specific trace of the stream.
    #[error("trace {index}: {source}")]
    AtTrace {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_trace(index: usize, source: Error) -> Self {
        Error::AtTrace {
            index,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
