use alloc::string::String;

use crate::checkpoint::CheckpointError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate batch: channel {channel} has a single element, batch statistics are undefined")]
    DegenerateBatch { channel: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss {loss}")]
    NonFiniteLoss { loss: f64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
