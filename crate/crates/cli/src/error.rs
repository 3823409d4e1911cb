use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: invalid config at `{path}` (line {line}, column {column}): {message}")]
    Config {
        origin: String,
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] multispin::Error),

    #[error("worker pool: {0}")]
    Pool(String),
}
