use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate contrast: image has a single intensity value {0}")]
    DegenerateContrast(f64),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("patch {x0},{y0} {width}x{height} does not fit in a {image_width}x{image_height} image")]
    OutOfBounds {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },

    #[error("count {count} exceeds the binomial trial count K={k}")]
    CountExceedsK { count: u32, k: u32 },

    #[error("LBP diverged at sweep {sweep}{}", em_iter.map(|t| format!(" (EM iteration {t})")).unwrap_or_default())]
    Diverged { sweep: usize, em_iter: Option<usize> },

    #[error("S not PD: posterior precision failed Cholesky factorization")]
    NotPositiveDefinite,

    #[error("dense solver limited to {limit} pixels, image has {pixels}")]
    TooLarge { pixels: usize, limit: usize },

    #[error("saddle-point solve failed: {0}")]
    SaddleNoSolution(String),

    #[error("zero dynamic range in reference field")]
    ZeroDynamicRange,

    #[error("malformed {format} data: {msg}")]
    Parse { format: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad arguments or inputs rather than by a
    /// failing computation or the filesystem.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DegenerateContrast(_)
                | Error::ShapeMismatch { .. }
                | Error::OutOfBounds { .. }
                | Error::CountExceedsK { .. }
                | Error::TooLarge { .. }
                | Error::ZeroDynamicRange
                | Error::Parse { .. }
        )
    }
}
