use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent configuration. Exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Missing inputs or a failure while running. Exit code 3.
    #[error("{0}")]
    Run(String),

    #[error(transparent)]
    Core(#[from] dipnet_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
