use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy shared by every module.
///
/// `Contract` covers violated preconditions (shape mismatches, bad
/// arguments, misaligned inputs), `NonFinite` covers NaN/Inf escaping a
/// numeric kernel, and `Integrity` covers corrupted or mismatched
/// on-disk artifacts. The CLI maps these to distinct exit codes.
#[derive(Error, Debug)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
