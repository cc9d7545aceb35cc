use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: invalid sidecar: {message}")]
    Sidecar { path: PathBuf, message: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("alignment: dimension mismatch ({a_width}x{a_height} vs {b_width}x{b_height})")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },

    #[error("alignment: resolution mismatch ({a} m/px vs {b} m/px)")]
    ResolutionMismatch { a: f64, b: f64 },

    #[error("grid {width}x{height} is smaller than the {kernel}x{kernel} kernel")]
    GridTooSmall {
        width: usize,
        height: usize,
        kernel: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate histogram: all values equal {0}")]
    DegenerateHistogram(f64),

    #[error("histogram has only {0} non-empty bins, at least 3 required")]
    TooFewBins(usize),

    #[error("EM collapsed: component {component} lost all responsibility")]
    EmCollapse { component: usize },

    #[error("no urban area survived component filtering")]
    NoUrbanArea,

    #[error("no urban centers found")]
    NoUrbanCenters,

    #[error("distance transform needs at least one center pixel")]
    EmptyCenterMask,

    #[error("profile has {got} bins, at least {needed} required")]
    ProfileTooShort { got: usize, needed: usize },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("flat gradient, LD undefined")]
    FlatGradient,

    #[error("residual series has {0} bins, at least 4 required")]
    SeriesTooShort(usize),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the inputs or configuration rather than by a
    /// processing stage. The CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Decode { .. }
            | Error::Sidecar { .. }
            | Error::NonFinite { .. }
            | Error::InvalidGrid(_)
            | Error::DimensionMismatch { .. }
            | Error::ResolutionMismatch { .. }
            | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
