use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("expected {expected} records, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("point spread function channel {channel} has zero energy")]
    DegeneratePsf { channel: usize },

    #[error("SLM sub-pixel {subpixel} contains no field sample; field pitch too coarse")]
    ResolutionTooCoarse { subpixel: usize },

    #[error("no primitive polynomial tabulated for degree {0} (supported: 2..=16)")]
    UnsupportedDegree(u32),

    #[error("object height {object_m} m exceeds the captured scene height {scene_m} m")]
    OutOfField { object_m: f64, scene_m: f64 },

    #[error("signal has zero variance; SNR is undefined")]
    DegenerateSignal,

    #[error("perspective corners are degenerate; homography is singular")]
    SingularHomography,

    #[error("tape is incomplete: {0}")]
    TapeIncomplete(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::DimensionMismatch(_) | Error::UnsupportedDegree(_) => {
                ErrorClass::Config
            }
            Error::Io { .. } | Error::Format(_) | Error::CountMismatch { .. } => ErrorClass::Data,
            Error::DegeneratePsf { .. }
            | Error::ResolutionTooCoarse { .. }
            | Error::OutOfField { .. }
            | Error::DegenerateSignal
            | Error::SingularHomography
            | Error::TapeIncomplete(_)
            | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }
}

pub(crate) fn dim_mismatch(what: &str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Error {
    Error::DimensionMismatch(format!("{what}: expected {expected:?}, found {found:?}"))
}
