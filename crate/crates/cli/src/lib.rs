//! Command-line front end for the upqkd link model.

pub mod commands;
pub mod config;
pub mod table;

use config::ConfigError;

/// Exit code for bad flags, configs or parameter values.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running a valid request.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<upqkd::Error> for CliError {
    fn from(e: upqkd::Error) -> Self {
        use upqkd::Error as E;
        match e {
            E::InvalidParameter { .. } | E::TargetAbovePeak { .. } | E::DarkProbabilityTooLarge(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
