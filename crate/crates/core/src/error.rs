use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("operation not supported for the {0} model")]
    UnsupportedModel(&'static str),
    #[error("degenerate step: |sigma + w| = {0:e} is too small to normalize")]
    DegenerateStep(f64),
    #[error("step size too large: pre-normalization norm {norm:.3e} at site {site}")]
    StepTooLarge { site: usize, norm: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
