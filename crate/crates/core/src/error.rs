use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid instance {id}: {message}")]
    Validation { id: String, message: String },

    #[error("unknown instance id {0}")]
    UnknownId(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("backend transport error: {0}")]
    Transport(String),

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("backend reported an error: {0}")]
    Backend(String),

    #[error("stale model handle: handle is at t={handle}, backend is at t={backend}")]
    StaleHandle { handle: u64, backend: u64 },

    #[error("no eligible neighbors after excluding the query context")]
    NoEligibleNeighbors,

    #[error("PAL starved: only {scored} of {needed} candidates could be perturbed; fall back to another strategy")]
    PalStarved { scored: usize, needed: usize },

    #[error("scoring candidate {id} failed: {source}")]
    Candidate {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {t} failed: {source}")]
    Iteration {
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("mismatched checkpoint grids: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn for_candidate(id: &str, source: Error) -> Self {
        Error::Candidate {
            id: id.to_string(),
            source: Box::new(source),
        }
    }

    /// True for failures that originate in the backend transport, whatever
    /// wrapping they picked up on the way out.
    pub fn is_transport(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Candidate { source, .. } | Error::Iteration { source, .. } => {
                source.is_transport()
            }
            _ => false,
        }
    }
}
