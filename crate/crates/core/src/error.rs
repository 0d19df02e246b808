use thiserror::Error;

/// Errors raised by the library. Input problems and numerical failures are
/// kept apart so the CLI can map them to distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("maximum bias is unbounded over the parameter space")]
    BiasUnbounded,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("confidence region is empty")]
    EmptyRegion,
    #[error("identified set is empty: the estimates contradict the parameter space")]
    EmptyIdentifiedSet,
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("no root in bracket: exceedance {lo_value} at a={lo}, {hi_value} at a={hi}")]
    NoRoot {
        lo: f64,
        hi: f64,
        lo_value: f64,
        hi_value: f64,
    },
}

impl Error {
    /// True for failures caused by malformed or inconsistent input data.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::BiasUnbounded => "bias_unbounded",
            Error::RankDeficient => "rank_deficient",
            Error::Singular(_) => "singular",
            Error::EmptyRegion => "empty_region",
            Error::EmptyIdentifiedSet => "empty_identified_set",
            Error::NonConvergence(_) => "non_convergence",
            Error::NoRoot { .. } => "no_root",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
