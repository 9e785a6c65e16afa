use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed binary input (IDX files, checkpoints).
    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("unsupported version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    /// Classifier accuracy gate refused scoring duty.
    #[error("gate failure: classifier test accuracy {achieved:.4} below required {required:.4}")]
    Gate { achieved: f64, required: f64 },

    /// Training hit a non-finite loss or parameter.
    #[error("numeric abort at step {step}: {what}")]
    NumericAbort { step: u64, what: String },

    #[error("class {class} has only {have} samples, need {need}")]
    InsufficientClass {
        class: u8,
        have: usize,
        need: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
