//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by grid, model, and risk operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or bounding box falls outside the domain it is sampled from.
    #[error("out of domain: {context} (lon {lon}, lat {lat})")]
    OutOfDomain { context: String, lon: f64, lat: f64 },

    /// Two gridded inputs that must share geometry or time axes do not.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Blended output cells not covered by any patch.
    #[error("coverage error: {n_uncovered} uncovered cells, first at (x={first_x}, y={first_y})")]
    Coverage {
        n_uncovered: usize,
        first_x: usize,
        first_y: usize,
    },

    /// A model was used before fitting.
    #[error("model not trained: {0}")]
    NotTrained(&'static str),

    /// Mutation of a frozen model, or training through an unfrozen one.
    #[error("frozen-model contract violation: {0}")]
    Frozen(String),

    /// A forecast cycle is missing history or forecast hours.
    #[error("incomplete cycle: {0}")]
    IncompleteCycle(String),

    /// Tensor shapes disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid parameter or violated type invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
