use std::path::PathBuf;

/// Process exit status of each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Data = 3,
    Runtime = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Runtime(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::Data(_) => ExitCode::Data,
            CliError::Runtime(_) | CliError::Write { .. } => ExitCode::Runtime,
        }
    }
}

impl From<sirus::Error> for CliError {
    fn from(e: sirus::Error) -> Self {
        use sirus::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) => CliError::Config(msg),
            E::Io { .. }
            | E::Csv(_)
            | E::MissingColumn(_)
            | E::NonNumeric { .. }
            | E::NoUsableRows(_)
            | E::InvalidDataset(_)
            | E::NonFinite(_)
            | E::DimensionMismatch { .. }
            | E::ZeroVariance(_)
            | E::Json(_) => CliError::Data(msg),
            E::InvalidSplit(_) | E::InvalidPath(_) | E::DegenerateRule(_) | E::DegenerateP0Grid { .. } => {
                CliError::Runtime(msg)
            }
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
