use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        source: unavoid::Error,
    },
    #[error(transparent)]
    Core(#[from] unavoid::Error),
    #[error("replay mismatch in {count} field(s)")]
    Mismatch { count: usize },
}

pub type Result<T> = std::result::Result<T, CliError>;
