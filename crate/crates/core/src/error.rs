use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("no binding supplied for leaf `{leaf}`")]
    MissingBinding { leaf: String },

    #[error("binding for leaf `{leaf}` has shape {got:?}, expected {expected:?}")]
    BindingShape {
        leaf: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("{what}: extent {extent} is not divisible by {factor} (H={height}, W={width})")]
    Divisibility {
        what: &'static str,
        factor: usize,
        extent: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
