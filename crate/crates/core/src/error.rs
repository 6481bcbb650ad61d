use alloc::string::String;

/// Errors raised by the core algorithms.
///
/// Variants map onto the failure classes the CLI reports: argument,
/// integrity (format, pairing, corrupt model) and numeric.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("input shape mismatch: {0}")]
    Input(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("relative change undefined for base {0}")]
    UndefinedChange(f64),
    #[error("incomplete adversarial pairing: missing {0}")]
    IncompletePairing(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("training diverged: {0}")]
    Training(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
