use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report. Each variant maps to one distinct
/// validation or numerical contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("domain id {domain} out of range for {domains} domains")]
    DomainOutOfRange { domain: u32, domains: usize },
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("empty embedding set")]
    Empty,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {0} is not unit norm although the normalized flag is set")]
    NotNormalized(usize),
    #[error("zero-norm vector ({0})")]
    ZeroVector(String),
    #[error("{classes} columns do not fit in dimension {dim}")]
    TooManyClassesForDim { classes: usize, dim: usize },
    #[error("rank deficient: |R[{index},{index}]| = {value:e}")]
    RankDeficient { index: usize, value: f64 },
    #[error("simplex ETF needs at least two vertices")]
    SingletonEtf,
    #[error("threshold p = {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("calibrator output has zero norm")]
    DegenerateOutput,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("domain {0} has no rows")]
    MissingDomain(usize),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
