use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid mask: row {row} has no unmasked position")]
    InvalidMask { row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input too short: {frames} frames, need at least {min}")]
    InputTooShort { frames: usize, min: usize },

    #[error("infeasible alignment: {available} frames, need at least {required}")]
    InfeasibleAlignment { required: usize, available: usize },

    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },

    #[error("word error rate is undefined for an empty reference")]
    EmptyReference,

    #[error("attention stats: {0}")]
    Stats(String),

    #[error("width search: {0}")]
    Search(String),

    #[error("variant `{0}` has no self-attention module")]
    UnsupportedVariant(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
