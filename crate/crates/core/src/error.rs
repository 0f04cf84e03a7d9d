use thiserror::Error;

/// Errors produced by mesh construction, simulation and readout training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate geometry at hinge {hinge}: wing triangle has zero area")]
    DegenerateHinge { hinge: usize },

    #[error("zero-length truss {truss}")]
    ZeroLengthTruss { truss: usize },

    #[error(
        "covariance factorization failed for imperfection field; \
         try adding jitter (1e-12) to the diagonal"
    )]
    CovarianceFactorization,

    #[error("simulation diverged at t = {time:.6} s (max displacement {max_displacement:.3e} m)")]
    Divergence { time: f64, max_displacement: f64 },

    #[error("closed-loop output diverged at t = {time:.6} s (|z*| = {magnitude:.3e})")]
    OutputDivergence { time: f64, magnitude: f64 },

    #[error("signal diverged at step {step} (|z| = {magnitude:.3e})")]
    SignalDivergence { step: usize, magnitude: f64 },

    #[error("invalid actuation command: {0}")]
    InvalidCommand(String),

    #[error("invalid roles: {0}")]
    InvalidRoles(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("all {0} designs failed; try a larger mesh or a different task")]
    AllDesignsFailed(usize),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(format!("csv: {e}"))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
