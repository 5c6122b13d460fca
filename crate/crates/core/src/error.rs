use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset structure: {0}")]
    Structure(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate bandwidth: all pairwise distances are zero; add jitter to the inputs or pass an explicit bandwidth")]
    DegenerateBandwidth,

    #[error("numerical input: {0}")]
    NumericalInput(String),

    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    #[error("optimizer diverged at iteration {iteration} (loss {loss:.3e}); try a smaller learning rate")]
    Divergence { iteration: usize, loss: f64 },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("policy domain: {0}")]
    Domain(String),

    #[error("outer iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite policy gradient at iteration {0}")]
    NonFiniteGradient(usize),

    #[error("tuning failed: every grid entry was invalid")]
    TuningFailure,

    #[error("fixture `{name}` not found at {path}; build it with `proxbridge opl` (see README, \"Target policy fixtures\")")]
    MissingFixture { name: String, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Structure(_)
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::EmptyDataset(_)
                | Error::Domain(_)
                | Error::MissingFixture { .. }
                | Error::UnsupportedMode(_)
        )
    }
}
