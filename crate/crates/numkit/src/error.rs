use thiserror::Error;

pub type Result<T> = std::result::Result<T, NumError>;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A softmax row had every entry masked out.
    #[error("masked_softmax: every entry of row {row} is masked")]
    AllMasked { row: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NumError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        NumError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NumError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
