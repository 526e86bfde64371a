use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("channel {channel} has no transition labelled `{target}`")]
    UnknownTarget { channel: String, target: String },

    #[error("non-physical configuration: {0}")]
    NonPhysical(String),

    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("sample span covers {cycles:.6} modulation cycles, expected an integer")]
    NonIntegerCycles { cycles: f64 },

    #[error("series is not uniformly sampled")]
    NonUniform,

    #[error("tracking loop diverged: error grew for {steps} consecutive steps")]
    LoopDivergence { steps: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that stem from user configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidParameter { .. }
                | Error::UnknownTarget { .. }
                | Error::NonPhysical(_)
        )
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}
