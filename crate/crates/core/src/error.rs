use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("token id {id} out of range for table with {rows} rows")]
    IndexOutOfRange { id: usize, rows: usize },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("unknown task rule `{0}`")]
    UnknownRule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line runner.
    ///
    /// 1: configuration, 2: numeric failure, 3: I/O (including unreadable
    /// checkpoints).
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NonFiniteGradient(_) | Error::Diverged { .. } => 2,
            Error::Io { .. } | Error::Checkpoint(_) => 3,
            _ => 1,
        }
    }
}
