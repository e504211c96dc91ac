use thiserror::Error;

/// Everything that can go wrong across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("reflection vector norm {norm:e} is below the floor {floor:e}")]
    ZeroReflectionVector { norm: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("pool has {available} speakers, {required} required")]
    PoolTooSmall { available: usize, required: usize },

    #[error("empty pool: {0}")]
    EmptyPool(String),

    #[error("degenerate covariance: {0} sample(s), need at least 2")]
    DegenerateCovariance(usize),

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    DivergenceDetected { iteration: usize, loss: f64 },

    #[error("speaker {0:?} has too few utterances for a diagonal cell")]
    InsufficientUtterances(String),

    #[error("similarity matrix is {0}x{0}, need at least 2x2")]
    MatrixTooSmall(usize),

    #[error("reference matrix has zero diagonal dominance")]
    DegenerateReference,

    #[error("score set has no {0} scores")]
    EmptyScores(&'static str),

    #[error("weights sum to zero")]
    ZeroWeightSum,

    #[error("split missing: {0}")]
    SplitMissing(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("record dimension {got} does not match pool dimension {expected}")]
    DimMismatch { expected: usize, got: usize },

    #[error("duplicate record ({speaker:?}, {utterance:?})")]
    DuplicateRecord { speaker: String, utterance: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Prefixes an I/O error with the path it concerns.
pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
