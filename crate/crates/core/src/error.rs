use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its physical range.
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("target efficiency {target} is above the detector peak {peak}")]
    TargetAbovePeak { target: f64, peak: f64 },

    #[error("dark probability per gate {0} breaks the P_dark << 1 regime")]
    DarkProbabilityTooLarge(f64),

    #[error("empirical QBER needs at least one count")]
    NoCounts,

    #[error("true/false tables need a fixed-state run")]
    NotFixedState,

    #[error("worker pool: {0}")]
    ThreadPool(String),
}

pub(crate) fn check(
    ok: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}
