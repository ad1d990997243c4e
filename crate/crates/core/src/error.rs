use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("differentiation error: {0}")]
    Autodiff(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("problem stream exhausted after {0} problems")]
    StreamExhausted(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
