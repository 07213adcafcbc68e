use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("training diverged at epoch {epoch}, time pair {pair}: {reason}")]
    Diverged {
        epoch: usize,
        pair: usize,
        reason: String,
    },
    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}

macro_rules! arg_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Argument(alloc::format!($($arg)*))
    };
}

pub(crate) use arg_err;
pub(crate) use shape_err;
