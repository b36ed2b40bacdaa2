use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value that is not finite where the tensor invariant requires one.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("division by a divisor with magnitude below the guard ({0:e})")]
    DivisionByZero(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {0} is not on this graph")]
    DanglingNode(usize),

    #[error("loss node must have shape [1], got {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// Malformed configuration text (unknown key, bad value, violated invariant).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data file. `line` is 1-based; 0 means the problem is not tied to a line.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Loss or parameters became non-finite during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
