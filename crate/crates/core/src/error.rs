use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
///
/// `Layout` covers mismatched parameter layouts and shape bookkeeping,
/// `Contract` covers precondition violations by callers, `Numeric` covers
/// non-finite values and failed factorizations, `Config` covers invalid
/// experiment configuration, and `Io` wraps filesystem failures from the
/// dataset loader.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Prefix the message with additional context, preserving the kind.
    pub fn context(self, ctx: &str) -> CoreError {
        match self {
            CoreError::Layout(m) => CoreError::Layout(format!("{ctx}: {m}")),
            CoreError::Contract(m) => CoreError::Contract(format!("{ctx}: {m}")),
            CoreError::Numeric(m) => CoreError::Numeric(format!("{ctx}: {m}")),
            CoreError::Config(m) => CoreError::Config(format!("{ctx}: {m}")),
            CoreError::Io(e) => CoreError::Io(e),
        }
    }
}
