use std::path::PathBuf;

/// Errors surfaced by the simulator, the decision engine and the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid DNN profile: {0}")]
    Profile(String),

    #[error("decision {x} out of range [{min}, {max}]")]
    DecisionOutOfRange { x: usize, min: usize, max: usize },

    #[error("device queue underflow at slot {slot}: {queue_len} queued, {arrived} arrived, {departed} departed")]
    QueueUnderflow {
        slot: u64,
        queue_len: u32,
        arrived: u32,
        departed: u32,
    },

    #[error("twin error: {0}")]
    Twin(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("invariant violated (seed {seed}, slot {slot}): {message}")]
    Invariant {
        seed: u64,
        slot: u64,
        message: String,
    },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// A failed run with everything needed to replay it.
    #[error("run failed (policy {policy}, {device_task_rate} tasks/s, edge load {edge_load}, seed {seed}): {source}")]
    Run {
        policy: String,
        device_task_rate: f64,
        edge_load: f64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
