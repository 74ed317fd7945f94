use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("manifest has no data rows")]
    EmptyManifest,
    #[error("line {line}: label {label:?} is not a registered class id")]
    BadLabel { line: usize, label: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("image root unavailable: {0}")]
    RootUnavailable(PathBuf),
    #[error("invalid class registry: {0}")]
    InvalidRegistry(String),

    #[error("class {0} has no records")]
    EmptyClass(usize),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("non-finite value in input image")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pretrained weights unavailable: {0}")]
    WeightsUnavailable(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),
    #[error("invalid class count {0}; need at least 2")]
    InvalidClassCount(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("bad weight file: {0}")]
    BadWeights(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("failed to persist checkpoint: {0}")]
    PersistFailure(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("class {0} out of range")]
    BadClass(usize),
    #[error("per-class metrics missing class {0}")]
    MissingClass(usize),

    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),
    #[error("no completed runs to compare")]
    NoRuns,
    #[error("plot backend unavailable: {0}")]
    PlotBackendUnavailable(String),
    #[error("disk full while writing {0}")]
    DiskFull(PathBuf),

    #[error("image decode: {0}")]
    Image(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable numeric code, shared with the C interface.
    pub fn code(&self) -> i32 {
        match self {
            Error::MissingFile(_) => 10,
            Error::EmptyManifest => 11,
            Error::BadLabel { .. } => 12,
            Error::DuplicateId(_) => 13,
            Error::MalformedManifest(_) => 14,
            Error::RootUnavailable(_) => 15,
            Error::InvalidRegistry(_) => 16,
            Error::EmptyClass(_) => 20,
            Error::InvalidSpec(_) => 21,
            Error::IndexOutOfRange(_) => 22,
            Error::UnknownArchitecture(_) => 30,
            Error::NonFiniteInput => 31,
            Error::InvalidConfig(_) => 32,
            Error::WeightsUnavailable(_) => 40,
            Error::ChecksumMismatch(_) => 41,
            Error::InvalidClassCount(_) => 42,
            Error::ShapeMismatch { .. } => 43,
            Error::BadWeights(_) => 44,
            Error::InvalidDistribution(_) => 50,
            Error::PersistFailure(_) => 51,
            Error::EmptySplit(_) => 52,
            Error::DivergedLoss { .. } => 53,
            Error::LengthMismatch { .. } => 60,
            Error::EmptyInput => 61,
            Error::BadClass(_) => 62,
            Error::MissingClass(_) => 63,
            Error::ConfigInvalid(_) => 70,
            Error::NoRuns => 71,
            Error::PlotBackendUnavailable(_) => 72,
            Error::DiskFull(_) => 73,
            Error::Image(_) => 80,
            Error::Parse(_) => 81,
            Error::Io(_) => 90,
        }
    }
}

/// Wraps an I/O failure for `path`, mapping a missing file and a full disk
/// onto their dedicated variants.
pub(crate) fn io_at(path: impl Into<PathBuf>, err: io::Error) -> Error {
    let path = path.into();
    match err.kind() {
        io::ErrorKind::NotFound => Error::MissingFile(path),
        io::ErrorKind::StorageFull => Error::DiskFull(path),
        _ => Error::Io(err),
    }
}
