use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gaussian {index} has a non-finite {field}")]
    NonFiniteParameter { index: usize, field: &'static str },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("feature dimension mismatch: cloud has {expected}, got {found}")]
    FeatureDim { expected: usize, found: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("contribution log was recorded for {recorded} gaussians, cloud has {actual}")]
    MismatchedLog { recorded: usize, actual: usize },

    #[error("cloud has {len} gaussians, need more than {needed}")]
    CloudTooSmall { len: usize, needed: usize },

    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    PixelOutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },

    #[error("rendered feature at pixel ({u}, {v}) is zero; no discriminative feature")]
    DegenerateFeature { u: usize, v: usize },

    #[error("query feature is zero")]
    ZeroQuery,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteParameter { .. } | Error::NonFiniteGradient { .. } => true,
            Error::Training { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
