use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("self-loop at node {0} is not a valid edge")]
    SelfLoop(usize),
    #[error("edge ({i}, {j}) has non-positive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("node {0} has zero degree")]
    ZeroDegree(usize),
    #[error("diffusion step 2^{exponent} exceeds the maximum step {max_step}")]
    Overflow { exponent: u32, max_step: usize },
    #[error("invalid scale sequence: {0}")]
    InvalidScales(String),
    #[error("filter index {index} out of range (bank has {count} filters)")]
    BadFilterIndex { index: usize, count: usize },
    #[error("graph has {n} nodes, above the densification cap {cap}")]
    GraphTooLarge { n: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("need at least {needed} samples, got {available}")]
    NotEnoughSamples { needed: usize, available: usize },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: node id {id} not listed in the graph indicator")]
    DanglingNodeId { file: PathBuf, line: usize, id: usize },
    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("report parse failure: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
