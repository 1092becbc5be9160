use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dtype mismatch in {op}: {lhs} vs {rhs}")]
    DTypeMismatch {
        op: &'static str,
        lhs: &'static str,
        rhs: &'static str,
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("placement violation in {op}: {reason}")]
    Placement { op: String, reason: String },
    #[error("mixed placements in federated structure at {}", paths.join(", "))]
    MixedStructure { paths: Vec<String> },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unsupported under federated_map: {0}")]
    Unbatchable(String),
    #[error("cannot differentiate: {0}")]
    Differentiation(String),
    #[error("closure violation: primitive `{0}` is not in the registered set")]
    UnknownPrimitive(String),
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("sharding error: {0}")]
    Sharding(String),
    #[error("worker {worker} failed: {source}")]
    Worker { worker: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
