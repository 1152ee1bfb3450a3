use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line tool, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("identity check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Core(#[from] mexp_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 1 identity check failed, 2 config, 3 data validation, 4 fit, 5 weak instrument.
    pub fn exit_code(&self) -> u8 {
        use mexp_core::Error as E;
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Input(_) => 3,
            Self::CheckFailed(_) => 1,
            Self::Core(e) => match e {
                E::Config(_) | E::Fold(_) => 2,
                E::Validation(_) | E::InvalidLaw(_) => 3,
                E::DegenerateFit { .. } | E::NonFinite(_) => 4,
                E::WeakInstrument { .. } | E::NoCompliers => 5,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
