use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("episode exhausted: step {step} at horizon {horizon}")]
    EpisodeExhausted { step: usize, horizon: usize },

    #[error("ragged episode: {0}")]
    RaggedEpisode(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ground truth unavailable for diagnostics")]
    DiagnosticsUnavailable,

    #[error("target set is unreachable from state {0}")]
    Unreachable(usize),

    #[error("stale activation cache: net generation {net}, cache generation {cache}")]
    StaleCache { net: u64, cache: u64 },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
