use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("gradient check infeasible: {0}")]
    InfeasibleCheck(String),

    #[error("clustering produced no clusters")]
    EmptyClustering,

    #[error("episode infeasible: {eligible} eligible classes, {required} required")]
    EpisodeInfeasible { eligible: usize, required: usize },

    #[error("evaluation protocol infeasible: {0}")]
    ProtocolInfeasible(String),

    #[error("round {round} failed: fallback ladder exhausted")]
    RoundFailed { round: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
