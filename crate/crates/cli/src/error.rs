use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const DOMAIN: i32 = 4;
    pub const LEDGER_MISMATCH: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] sfl_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ledger disagrees with the closed-form energy (max relative error {max_rel_error:.3e} > {rtol:.0e})")]
    LedgerMismatch { max_rel_error: f64, rtol: f64 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use sfl_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Parse { .. } => exit::PARSE,
            CliError::Core(E::Infeasible { .. }) => exit::INFEASIBLE,
            CliError::Core(E::Domain { .. }) => exit::DOMAIN,
            CliError::Core(_) => exit::PARSE,
            CliError::Io { .. } => exit::IO,
            CliError::LedgerMismatch { .. } => exit::LEDGER_MISMATCH,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(source: std::io::Error) -> Self {
        CliError::io("<stdout>", source)
    }
}
