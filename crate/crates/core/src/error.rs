use thiserror::Error;

/// Errors surfaced by model validation, linear solves, and estimators.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("zero-support cell (s={s}, a={a}) in the data distribution")]
    ZeroSupport { s: usize, a: usize },

    #[error("unbounded ratio at (s={s}, a={a}): pi_b is zero where pi_e is positive")]
    UnboundedRatio { s: usize, a: usize },

    #[error("singular system in {context} (condition estimate {cond:.3e})")]
    Singular { context: String, cond: f64 },

    #[error("{class}: features not linearly independent under the data weighting (sigma_min {sigma_min:.3e})")]
    RankDeficient { class: String, sigma_min: f64 },

    #[error("span not closed under {operator} (max column residual {residual:.3e})")]
    NotClosed { operator: String, residual: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<OpeError>,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, OpeError>;
