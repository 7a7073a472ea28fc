use std::io;

/// Errors raised anywhere in the crate. Every message is prefixed with the
/// subsystem that produced it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor: {op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor: {0}")]
    Contract(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("format: {0}")]
    Format(#[from] FormatError),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("training: loss diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("io: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Binary file decoding failures. Offsets are byte positions in the file.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },

    #[error("truncated payload at byte {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("shape mismatch at byte {offset}: {detail}")]
    ShapeMismatch { offset: usize, detail: String },

    #[error("invalid value at byte {offset}: {detail}")]
    InvalidValue { offset: usize, detail: String },

    #[error("unsupported format version {found} at byte {offset} (expected {expected})")]
    Version {
        offset: usize,
        found: u32,
        expected: u32,
    },

    #[error("trailing bytes at byte {offset}: {extra} unread")]
    Trailing { offset: usize, extra: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
