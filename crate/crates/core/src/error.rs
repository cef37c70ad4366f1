use crate::sampling::StrategyKind;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A token sequence violates the vocabulary or termination rules.
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    /// A structural parameter (vocab size, weights, table length) is out of range.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Two objects that must share a vocabulary or prompt space do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Loss or gradient requested on an empty batch.
    #[error("empty preference batch")]
    EmptyBatch,

    /// The requested strategy has no closed-form pair density.
    #[error("strategy {0:?} has no closed-form pair density")]
    UnsupportedStrategy(StrategyKind),

    /// exp(r) overflowed while computing a partition function; the instance
    /// reward scale is misconfigured.
    #[error("partition overflow: |r| = {max_abs_reward} exceeds safe range")]
    PartitionOverflow { max_abs_reward: f64 },

    /// An operation that assumes a realizable oracle was given a table oracle.
    #[error("operation requires a realizable oracle (r* built from a policy)")]
    NonRealizableOracle,

    /// Text-format parse failure (oracle tables, matrices).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
