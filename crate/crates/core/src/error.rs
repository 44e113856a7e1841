use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid loss family: {0}")]
    InvalidFamily(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Two samples in the data distribution are closer than the
    /// distinctness gap required by the property checks.
    #[error("tied probabilities at positions {i} and {j} (gap {gap:e})")]
    TiedProbabilities { i: usize, j: usize, gap: f64 },

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("size limit exceeded: {what} is {actual}, limit {limit}")]
    TooLarge {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("smoothing undefined at p=1 for power form")]
    SmoothingUndefined,

    #[error("non-finite loss at step {step}")]
    NanLoss { step: usize },

    /// The power-form weight k(-g)^(k-1) blew up; training near p=1 with
    /// small k is unstable and is rejected outright.
    #[error("power-form loss weight {weight:e} exceeds limit {limit:e} at step {step} (unstable regime for small k)")]
    UnstableWeight { step: usize, weight: f64, limit: f64 },

    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
