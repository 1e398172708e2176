use thiserror::Error;

use crate::shape::NodeAddress;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building, fitting or querying a meta-tree.
///
/// Row and column numbers in messages are 1-based (first data row, `x1`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree shape: {0}")]
    InvalidShape(String),

    #[error("invalid feature assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("row {row}: expected {expected} feature values, found {found}")]
    FeatureCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column x{column}: value {value} is outside 1..={arity}")]
    FeatureValue {
        row: usize,
        column: usize,
        value: i64,
        arity: u32,
    },

    #[error("row {row}: observation {value} is not valid for the {family} leaf model")]
    Observation {
        row: usize,
        value: i64,
        family: &'static str,
    },

    #[error("address {0} is outside the tree shape")]
    AddressOutOfShape(NodeAddress),

    #[error("invalid pruned subtree: {0}")]
    InvalidSubtree(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("model already fitted by a batch engine or holds sequential updates; reset it before a batch fit")]
    AlreadyFitted,

    #[error("the lazy engine requires one leaf-model prior shared by every node")]
    SharedPriorRequired,

    #[error("depth cap {cap} reached at {address} before the data concentrated")]
    DepthCapExceeded { address: NodeAddress, cap: usize },

    #[error("observation has zero probability under the model at {address}")]
    DegenerateLikelihood { address: NodeAddress },

    #[error("subtree enumeration would produce {count} subtrees, above the cap of {cap}")]
    EnumerationCap { count: String, cap: u64 },

    #[error("malformed model document: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
