use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input.
    #[error("invalid input: {0}")]
    Input(String),

    /// A rate model that breaks the birth/death assumptions.
    #[error("invalid rate model: {0}")]
    InvalidModel(String),

    #[error("no finite carrying capacity for atom {atom}: R(s) > 1 up to s = {s_max}")]
    NoFiniteRoot { atom: usize, s_max: f64 },

    /// Step size collapsed below `dt_min`; carries everything integrated so far.
    #[error("step size {dt:e} fell below dt_min at t = {t}")]
    Stiffness {
        t: f64,
        dt: f64,
        partial: Box<Trajectory>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("search failed: {0}")]
    SearchFailure(String),

    #[error("certificate unavailable: {0}")]
    CertificateUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
