use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm is zero")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("dimension too small: {0}")]
    DimensionTooSmall(String),
    #[error("degenerate objective: weighted sum has norm {0:e}")]
    DegenerateObjective(f64),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("ungrammatical clause: {0}")]
    Ungrammatical(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("quadratic for attribute weight has no real root (discriminant {0:e})")]
    NoRealRoot(f64),
    #[error("degenerate superposition: sum has norm {0:e}")]
    DegenerateSum(f64),
    #[error("operation requires the simplex layout")]
    RequiresSimplex,
    #[error("scene does not fit the patch grid: {0}")]
    GridOverflow(String),
    #[error("assignment is missing clause `{0}`")]
    MissingClause(String),
    #[error("betas must sum to 3, got {0}")]
    BetaConstraintViolated(f64),
    #[error("no functional row registered for class `{0}`")]
    MissingFrEntry(String),
    #[error("map has zero variance")]
    ZeroVariance,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("world too small: {0}")]
    WorldTooSmall(String),
    #[error("pipeline order violated: {0}")]
    PipelineOrder(&'static str),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
