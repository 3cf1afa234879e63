use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error at {context}: {message}")]
    Data { context: String, message: String },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("stage {stage} is not informative for subject `{subject}`")]
    NonInformativeStage { subject: String, stage: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("design matrix is rank deficient; null direction {null_direction:?}")]
    RankDeficient { null_direction: Vec<f64> },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} has no usable rows")]
    EmptyStage { stage: usize },

    #[error("no convergence after {iterations} iterations (gradient sup-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("non-finite objective or gradient at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical kernels, as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::EmptyStage { .. }
            | Error::NonConvergence { .. }
            | Error::NonFinite { .. } => true,
            Error::Stage { source, .. } | Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
