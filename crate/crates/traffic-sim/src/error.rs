use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("scenario file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown built-in scenario {0:?}")]
    UnknownScenario(String),
    #[error("step called after the episode ended")]
    EpisodeOver,
    #[error("trajectory log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
