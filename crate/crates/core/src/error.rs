use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed case file: {0}")]
    MalformedCase(String),
    #[error("case has no slack bus")]
    NoSlack,
    #[error("case has {0} slack buses, expected exactly one")]
    MultipleSlack(usize),
    #[error("branch {branch} has non-positive or non-finite reactance {x}")]
    NonpositiveReactance { branch: usize, x: f64 },
    #[error("branch {branch} references unknown or invalid bus {bus}")]
    DanglingBusReference { branch: usize, bus: usize },
    #[error("in-service network is not connected")]
    DisconnectedGrid,
    #[error("singular network topology (islanded grid)")]
    SingularTopology,
    #[error("singular nodal system")]
    SingularSystem,
    #[error("injections are unbalanced by {0:.3e} p.u.")]
    UnbalancedInjections(f64),
    #[error("outage of branches {0:?} islands the grid")]
    IslandingOutage(Vec<usize>),
    #[error("branch {0} does not exist or is already out of service")]
    InvalidOutage(usize),
    #[error("matrix is rank deficient")]
    RankDeficient,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not find an admissible outage set after {0} attempts")]
    ExhaustedResampling(usize),
    #[error("insufficient task data: {0}")]
    InsufficientTaskData(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("hash mismatch: {0}")]
    HashMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
