use thiserror::Error;

/// Structural problems found while validating a model or proposal graph.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("dependency cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("`{child}` names undeclared parent `{parent}`")]
    UndeclaredParent { child: String, parent: String },
    #[error("`{child}` has parent `{parent}` outside its enclosing plates")]
    CrossPlate { child: String, parent: String },
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("unknown plate `{0}`")]
    UnknownPlate(String),
    #[error("unknown parameter block {0}")]
    UnknownParam(String),
    #[error("`{node}`: {msg}")]
    Invalid { node: String, msg: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("planning error: {0}")]
    Plan(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("degenerate evidence: the estimate is zero")]
    DegenerateEvidence,
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("graph error: {0}")]
    Graph(#[from] GraphError),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
