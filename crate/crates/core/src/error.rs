use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes or counts of inputs do not agree.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear solve failed at time step {step}: {reason}")]
    SingularStep { step: usize, reason: String },

    #[error("training failed for coefficient {k}, mode {l} ({part}): {source}")]
    ModeFit {
        k: usize,
        l: usize,
        part: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("forward map failed at iteration {iteration}: {source}")]
    Forward {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forward solve failed for parameter {index}: {source}")]
    Solve {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
