use thiserror::Error;

#[derive(Debug, Error)]
pub enum StampError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite gradient in parameter table `{table}`")]
    NonFiniteGradient { table: String },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = StampError> = std::result::Result<T, E>;
