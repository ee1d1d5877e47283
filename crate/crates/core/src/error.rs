use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("directions are (anti)parallel: |<a,b>| = {abs_cos}")]
    ParallelDirections { abs_cos: f64 },

    #[error("kill and stretch directions are not orthogonal: <a,b> = {dot:e}")]
    NotOrthogonal { dot: f64 },

    #[error("stretch factor {0} outside [1, 100]")]
    InvalidStretchFactor(f64),

    #[error("sample list is empty")]
    EmptySamples,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("weight matrix must have fewer rows than columns, got {rows}x{cols}")]
    NotWide { rows: usize, cols: usize },

    #[error("embedding set mixes classes {0:?}, expected exactly one")]
    MultipleClasses(Vec<u32>),

    #[error("embedding set is in the wrong space: expected {expected}")]
    WrongSpace { expected: &'static str },

    #[error("merged classes have (nearly) identical centroids")]
    IdenticalClasses,

    #[error("merged classes have (nearly) antipodal centroids")]
    AntipodalClasses,

    #[error("class {0} not present in embeddings")]
    UnknownClass(u32),

    #[error("matrix is not rank deficient by exactly one (rank {rank}, rows {rows})")]
    NotRankDeficient { rank: usize, rows: usize },

    #[error("plan direction y is not in the null space of the matrix (residual {residual:e})")]
    YNotInNullSpace { residual: f64 },

    #[error("no null-space direction orthogonal to y remains")]
    NullSpaceExhausted,

    #[error("threshold {0} outside [0, 4]")]
    InvalidThreshold(f64),

    #[error("invalid singular spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("threshold selection needs at least one matched and one mismatched pair")]
    EmptyPairs,

    #[error("cross-validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),

    #[error("backdoor request {index} failed: {source}")]
    SequenceStep { index: usize, source: Box<Error> },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}
