use crate::ontology::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("hierarchy contains a cycle through node {0}")]
    Cycle(NodeId),
    #[error("edge {parent} -> {child} references an undeclared node")]
    DanglingEdge { parent: NodeId, child: NodeId },
    #[error("category {0} has children; categories must be leaves")]
    NonLeafCategory(NodeId),
    #[error("node {0} declared more than once")]
    DuplicateNode(NodeId),
    #[error("invalid root: {0}")]
    Root(String),
    #[error("hierarchy is not a tree: node {0} has several parents")]
    NotATree(NodeId),
    #[error("degenerate hierarchy: {0}")]
    DegenerateHierarchy(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("trace does not belong to this topology: {0}")]
    TraceMismatch(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("label {0} is not a category of the hierarchy")]
    UnknownLabel(NodeId),
    #[error("non-finite value at example {example}, feature {feature}")]
    NonFinite { example: usize, feature: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("topology hash mismatch between checkpoint and hierarchy")]
    TopologyMismatch,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
