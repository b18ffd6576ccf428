use thiserror::Error;

pub type Result<T> = std::result::Result<T, CgmError>;

#[derive(Debug, Error)]
pub enum CgmError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty attention support")]
    EmptyAttentionSupport,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown category {value:?} in column {column:?}")]
    UnknownCategory { column: String, value: String },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("csv error at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CgmError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CgmError::Contract(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        CgmError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
