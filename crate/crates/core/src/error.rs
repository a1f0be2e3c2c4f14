use std::path::PathBuf;

use thiserror::Error;
use veinatn_autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("image decode: {0}")]
    Decode(String),

    #[error("unsupported image: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model config: {0}")]
    Config(String),

    #[error("missing config key `{key}` (example: {example})")]
    MissingKey { key: &'static str, example: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset layout: {0}")]
    Layout(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("scores file: {0}")]
    Scores(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
