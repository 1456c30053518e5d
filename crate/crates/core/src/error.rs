use thiserror::Error;

/// Errors raised by the laboratory's constructors, projections and trainers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected n = {expected}, found n = {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension n = {n} outside the supported range [{min}, {max}]")]
    DimensionOutOfRange { n: usize, min: usize, max: usize },

    #[error("invalid face: {0}")]
    InvalidFace(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("block {0} is not a face of the cube")]
    NonCubicalBlock(usize),

    #[error("block count {blocks} outside [1, {max}]")]
    BlockCountOutOfRange { blocks: usize, max: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("distribution puts mass {mass:e} outside the support face")]
    SupportViolation { mass: f64 },

    #[error("restriction to the face is not a product distribution (log residual {residual:e})")]
    NotProduct { residual: f64 },

    #[error("RBM size n = {n}, m = {m} exceeds the exact-enumeration guard (n <= {max_n}, m <= {max_m})")]
    SizeGuard {
        n: usize,
        m: usize,
        max_n: usize,
        max_m: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("edge cover: {0}")]
    InvalidCover(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
