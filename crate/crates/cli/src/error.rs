use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_INVARIANT: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0} grid cell(s) failed; report written")]
    CellsFailed(usize),
    #[error("invariant violated: {}", .0.join("; "))]
    Invariant(Vec<String>),
    #[error(transparent)]
    Core(#[from] gzm_core::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        use gzm_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::CellsFailed(_) => EXIT_TRAINING,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(e) => match e {
                E::Config(_) | E::Parameter(_) => EXIT_USAGE,
                E::Training { .. } | E::NonFinite { .. } | E::Generation(_) | E::Dimension(_) | E::Index { .. } => {
                    EXIT_TRAINING
                }
                _ => EXIT_DATA,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
