use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by fitting, estimation and the oracle machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset failed validation: {0}")]
    Validation(String),

    #[error("degenerate fit in {stage}{}: {message}", fold_suffix(.fold))]
    DegenerateFit {
        stage: &'static str,
        fold: Option<usize>,
        message: String,
    },

    #[error("invalid fold plan: {0}")]
    Fold(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("weak instrument: |first-stage contrast| = {denominator:.3e} is below guard {delta:.3e}")]
    WeakInstrument { denominator: f64, delta: f64 },

    #[error("no compliers: first-stage contrast is zero")]
    NoCompliers,

    #[error("invalid law: {0}")]
    InvalidLaw(String),
}

fn fold_suffix(fold: &Option<usize>) -> String {
    match fold {
        Some(j) => format!(" (training complement of fold {j})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches fold provenance to fit errors; other variants pass through.
    pub fn in_fold(self, j: usize) -> Self {
        match self {
            Error::DegenerateFit { stage, message, .. } => Error::DegenerateFit {
                stage,
                fold: Some(j),
                message,
            },
            other => other,
        }
    }
}
