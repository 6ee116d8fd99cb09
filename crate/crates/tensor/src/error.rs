use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite value encountered in {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
