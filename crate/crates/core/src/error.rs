use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operand has the wrong extent along a named dimension.
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: tensors disagree: {left} vs {right}")]
    IncompatibleShapes {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: output would be empty ({detail})")]
    EmptyOutput { op: &'static str, detail: String },

    #[error("{block}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        block: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid block configuration: {0}")]
    InvalidBlock(String),

    #[error("config error{}: {msg}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Config { layer: Option<usize>, msg: String },

    #[error("unknown model variant {name:?}; valid names: {}", valid.join(", "))]
    UnknownVariant { name: String, valid: Vec<String> },

    #[error("shape propagation failed at layer {layer}: {msg}")]
    ShapePropagation { layer: usize, msg: String },

    #[error("missing weight {0:?}")]
    MissingWeight(String),

    #[error("weight {name:?} has shape {actual:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("backward is not implemented for {0}")]
    Unsupported(&'static str),

    #[error("bad magic {0:?}, expected \"Y4KW\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("inconsistent container manifest: {0}")]
    Inconsistent(String),

    #[error("batch norm {0:?} has no preceding convolution")]
    OrphanBatchNorm(String),

    #[error("{}:{line}: {msg}", file.display())]
    Label {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    InvalidInput(String),

    /// Bad invocation that the argument parser cannot see (environment, value ranges).
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(layer: impl Into<Option<usize>>, msg: impl Into<String>) -> Self {
        Error::Config {
            layer: layer.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
