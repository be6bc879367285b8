use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("row {row} has no unmasked entries")]
    DegenerateRow { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("relative distance {rel} outside table range 0..={max_dist}")]
    Range { rel: i64, max_dist: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite function value at input {input}, element {element}, offset {offset:+e}")]
    NonFiniteValue {
        input: usize,
        element: usize,
        offset: f64,
    },

    #[error("memory stream integrity: {0}")]
    StreamIntegrity(String),

    #[error("oracle contract violated: {0}")]
    Contract(String),

    #[error("ingestion failed: {0}")]
    Ingest(String),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("training diverged at step {step} (lr {lr:e}): {diagnostics}")]
    Diverged {
        step: u64,
        lr: f64,
        diagnostics: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::DegenerateRow { .. } => "degenerate_row",
            Error::Config(_) => "config",
            Error::Range { .. } => "range",
            Error::Vocabulary { .. } => "vocabulary",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::StreamIntegrity(_) => "stream_integrity",
            Error::Contract(_) => "contract",
            Error::Ingest(_) => "ingest",
            Error::Analysis(_) => "analysis",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
