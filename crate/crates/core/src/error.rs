use crate::lmi::LmiError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible: binding constraint family `{family}`")]
    Infeasible { family: String },
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("controller recovery failed: {0}")]
    Recovery(String),
    #[error("post-verification failed: {0}")]
    Verification(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("non-finite state at tick {0}")]
    NonFinite(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Maps a non-optimal solve to the matching error.
pub(crate) fn optimal(rep: crate::lmi::SolveReport, what: &str) -> Result<crate::lmi::SolveReport> {
    use crate::lmi::SolveStatus;
    match rep.status {
        SolveStatus::Optimal => Ok(rep),
        SolveStatus::Infeasible => Err(Error::Infeasible {
            family: rep.binding.unwrap_or_else(|| what.into()),
        }),
        SolveStatus::MaxIterations => Err(Error::NotConverged(format!("{what} stopped after {} iterations", rep.iterations))),
    }
}
