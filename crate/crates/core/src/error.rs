use crate::autodiff::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward needs a scalar loss, got {0}")]
    NonScalarLoss(Shape),

    #[error("stale tape: {0}")]
    StaleTape(&'static str),

    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("batch size mismatch: real batch has {real} columns, fake batch has {fake}")]
    BatchMismatch { real: usize, fake: usize },

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
