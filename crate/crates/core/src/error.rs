use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("arity error: {0}")]
    Arity(String),

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("degenerate collection: {0}")]
    DegenerateCollection(String),

    #[error("vector norm {norm} exceeds the fitted bound {bound}")]
    OutOfFit { norm: f64, bound: f64 },

    #[error("cardinality error: {0}")]
    Cardinality(String),

    #[error("probe count {probes} outside 1..={lists}")]
    Probe { probes: usize, lists: usize },

    #[error("dimension {dim} cannot be split into {parts} equal sub-vectors")]
    Subspace { dim: usize, parts: usize },

    #[error("code entry {value} at sub-vector {position} is out of range for {centroids} centroids")]
    Code {
        position: usize,
        value: usize,
        centroids: usize,
    },

    #[error("graph layer is empty")]
    EmptyLayer,

    #[error("index is empty")]
    EmptyIndex,

    #[error("token ids are required on both query and document")]
    LexicalInfo,

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid weight {weight} for term {term}")]
    Weight { term: u32, weight: f64 },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("value outside the function domain: {0}")]
    Domain(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("retriever produced {} of {wanted} requested negatives", partial.len())]
    Shortfall { wanted: usize, partial: Vec<u64> },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    File { path: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Probe { .. } | Error::Subspace { .. } => ErrorClass::Config,
            Error::Invariant(_) => ErrorClass::Internal,
            Error::File { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Attaches the file the error arose from.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
