use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("scan contains no points")]
    EmptyScan,

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("direction is undefined for a point at the origin")]
    UndefinedDirection,

    #[error("pixel ({row}, {col}) holds no projected point")]
    NoCorrespondence { row: usize, col: usize },

    #[error("no edge pixels at or above threshold {threshold}")]
    EmptyEdges { threshold: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss {loss} exceeds 10x the initial loss {initial}")]
    TrainingDiverged { epoch: usize, loss: f64, initial: f64 },

    #[error("insufficient correspondences: {found} survive, at least 4 are required")]
    InsufficientCorrespondences { found: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Coarse error classes, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Config,
    Data,
    EmptyEdges,
    Contract,
    Numeric,
    Training,
    Geometry,
    RegistrationFailed,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 10] = [
        ErrorClass::Io,
        ErrorClass::Format,
        ErrorClass::Config,
        ErrorClass::Data,
        ErrorClass::EmptyEdges,
        ErrorClass::Contract,
        ErrorClass::Numeric,
        ErrorClass::Training,
        ErrorClass::Geometry,
        ErrorClass::RegistrationFailed,
    ];

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Io => 10,
            ErrorClass::Format => 11,
            ErrorClass::Config => 12,
            ErrorClass::Data => 13,
            ErrorClass::EmptyEdges => 14,
            ErrorClass::Contract => 15,
            ErrorClass::Numeric => 16,
            ErrorClass::Training => 17,
            ErrorClass::Geometry => 18,
            ErrorClass::RegistrationFailed => 19,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Io => "io",
            ErrorClass::Format => "format",
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::EmptyEdges => "empty-edges",
            ErrorClass::Contract => "contract",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Training => "training-diverged",
            ErrorClass::Geometry => "degenerate-geometry",
            ErrorClass::RegistrationFailed => "registration-failed",
        }
    }
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
            Error::Io { .. } => ErrorClass::Io,
            Error::Format(_) => ErrorClass::Format,
            Error::Config(_) => ErrorClass::Config,
            Error::EmptyScan
            | Error::DegenerateScene(_)
            | Error::UndefinedDirection
            | Error::NoCorrespondence { .. } => ErrorClass::Data,
            Error::EmptyEdges { .. } => ErrorClass::EmptyEdges,
            Error::Contract(_) => ErrorClass::Contract,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::TrainingDiverged { .. } => ErrorClass::Training,
            Error::InsufficientCorrespondences { .. } | Error::DegenerateGeometry(_) => {
                ErrorClass::Geometry
            }
            Error::RegistrationFailed(_) => ErrorClass::RegistrationFailed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exit_codes_are_distinct() {
        let codes: HashSet<i32> = ErrorClass::ALL.iter().map(|c| c.exit_code()).collect();
        assert_eq!(codes.len(), ErrorClass::ALL.len());
        assert!(!codes.contains(&0) && !codes.contains(&1) && !codes.contains(&2));
    }

    #[test]
    fn registration_failure_is_not_io() {
        let failed = Error::RegistrationFailed("no consensus".into()).class();
        let io = Error::io("x", std::io::Error::other("boom")).class();
        assert_ne!(failed.exit_code(), io.exit_code());
    }
}
