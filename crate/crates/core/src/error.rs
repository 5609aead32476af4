//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrwError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected: no spanning tree exists")]
    NoSpanningTree,

    #[error("invalid configuration: state {state} out of range for {m} states at node {node}")]
    InvalidConfiguration { node: usize, state: usize, m: usize },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("pseudomarginals violate local consistency: worst violation {violation:.3e} exceeds tolerance {tolerance:.3e}")]
    InvalidPseudomarginals { violation: f64, tolerance: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inadmissible convex combination: max entrywise gap {gap:.3e} exceeds tolerance {tolerance:.3e}")]
    Inadmissible { gap: f64, tolerance: f64 },

    #[error("edge {0} is not covered by any tree in the mixture support")]
    UncoveredEdge(usize),

    #[error("edge appearance probabilities must be strictly positive: edge {edge} has value {value}")]
    NonPositiveEdgeAppearance { edge: usize, value: f64 },

    #[error("boundary point: table entry at {0} is zero; operation requires a strictly interior point")]
    BoundaryPoint(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("model file error: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, TrwError>;
