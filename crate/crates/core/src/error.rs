use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the solvers, the characteristic functions and the
/// Shapley engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Value iteration or policy evaluation cannot produce finite values,
    /// typically an improper policy under `gamma = 1`.
    #[error("episodic solvability failure: {0}")]
    EpisodicSolvability(String),

    /// The visit-count system of the steady-state distribution is singular.
    #[error("improper policy: {0}")]
    ImproperPolicy(String),

    #[error("conditioning on unvisited feature values: {0}")]
    ZeroMassConditioning(String),

    #[error("invalid composite state: {0}")]
    InvalidComposite(String),

    #[error("empty renormalisation support at state {0}")]
    EmptyRenormalisationSupport(String),

    #[error("exact enumeration limit exceeded: {players} players, limit {limit}")]
    EnumerationLimit { players: usize, limit: usize },

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("state selector: {0}")]
    StateSelector(String),

    #[error("interchange format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
