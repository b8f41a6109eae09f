use thiserror::Error;

/// Every failure the engine reports.
#[derive(Debug, Error)]
pub enum HimaeError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("degenerate batch: batch norm needs at least two samples per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("degenerate mask: ratio {ratio} over {patches} patches masks {masked}")]
    DegenerateMask {
        ratio: f64,
        patches: usize,
        masked: usize,
    },

    #[error("mask selects no samples")]
    EmptyMask,

    #[error("R² undefined: reference error is zero")]
    UndefinedRSquared,

    #[error("AUROC undefined: {0}")]
    UndefinedAuroc(String),

    #[error("non-finite gradient in parameter `{name}` at element {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HimaeError {
    /// Validation errors map to CLI exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HimaeError::Config(_)
                | HimaeError::Shape(_)
                | HimaeError::InputTooShort(_)
                | HimaeError::DegenerateMask { .. }
                | HimaeError::Contract(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HimaeError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HimaeError::Config(msg.into()))
}
