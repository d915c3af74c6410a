use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("plane fit failed: {0}")]
    FitFailure(String),

    /// One or more categories a reasoning step needs are absent from the map.
    #[error("grounding gap: missing {}", .missing.join(", "))]
    GroundingGap { missing: Vec<String> },

    /// The derived ordering matched none of the offered options.
    #[error("no option matches derived order [{}]", .derived.join(", "))]
    NoMatch { derived: Vec<String> },

    #[error("missing scene data: {0}")]
    MissingScene(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("dataset contains no valid records")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name used in failure reports and CLI messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::FitFailure(_) => "fit-failure",
            Error::GroundingGap { .. } => "grounding-gap",
            Error::NoMatch { .. } => "no-match",
            Error::MissingScene(_) => "missing-scene",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset => "empty-dataset",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateGeometry(msg.into())
    }
}

impl<E: std::fmt::Display> From<serde_path_to_error::Error<E>> for Error {
    fn from(err: serde_path_to_error::Error<E>) -> Self {
        let path = err.path().to_string();
        Error::Parse {
            path,
            message: err.into_inner().to_string(),
        }
    }
}
