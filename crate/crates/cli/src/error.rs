use std::path::PathBuf;

use thiserror::Error;

/// Operational failures of a run; all map to exit status 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),

    #[error("required input {} is missing; run the earlier stage first", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Core(#[from] fracsaddle::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
