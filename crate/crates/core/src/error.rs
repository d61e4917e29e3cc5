use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("duplicate edge (relation {relation}, target {target}, source {src})")]
    DuplicateEdge {
        relation: usize,
        target: usize,
        src: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("self relation already present")]
    SelfRelationPresent,

    #[error("relation-count mismatch: expected {expected}, found {found}")]
    RelationCountMismatch { expected: usize, found: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no supervised nodes")]
    NoSupervisedNodes,

    #[error("negative class weight {0}")]
    NegativeWeight(f64),

    #[error("empty graph segment {0}")]
    EmptySegment(usize),

    #[error("missing kernel for degree {0}")]
    MissingDegreeKernel(usize),

    #[error("invalid prior `{name}`: {reason}")]
    InvalidPrior { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty sample set")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
