use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for bound {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("document generation failed: {0}")]
    Generation(String),

    #[error("unknown element id {0}")]
    UnknownElement(usize),

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step} (epoch {epoch}): loss = {loss}")]
    Divergence { step: usize, epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
