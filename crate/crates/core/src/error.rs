//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("log map undefined for antipodal points")]
    Antipodal,
    #[error("icosphere level {0} exceeds the maximum of 7")]
    LevelTooLarge(usize),
    #[error("basis degree {0} outside 1..=16")]
    DegreeTooLarge(usize),
    #[error("endpoint set is empty")]
    EmptyEndpointSet,
    #[error("leave-one-out density vanished at {zero_count} pairs")]
    DegenerateLikelihood { zero_count: usize },
    #[error("1-ring fit is rank deficient at vertex {vertex} of hemisphere {hemi}")]
    SingularNeighborhood { hemi: u8, vertex: usize },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("connectivity counts were binned on different meshes (levels {0} and {1})")]
    MeshMismatch(usize, usize),
    #[error("no endpoint pairs left after filtering")]
    EmptyAfterFilter,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("point norm {norm} at line {line} deviates from 1 by more than 1e-3")]
    Norm { line: usize, norm: f64 },
    #[error("unsupported schema version {0}")]
    SchemaVersion(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
