use std::fmt;

/// Errors surfaced by the command-line layer.
///
/// `Usage` covers malformed invocations that clap cannot catch on its own
/// (contradictory flags, unparseable key=value arguments). Everything else
/// is a pipeline error from the core library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(cvl_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl From<cvl_core::Error> for CliError {
    fn from(err: cvl_core::Error) -> Self {
        CliError::Core(err)
    }
}

impl CliError {
    /// Process exit code: 2 for usage problems, 4 for I/O failures,
    /// 3 for any other pipeline error (bad data, dimension mismatches, ...).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(cvl_core::Error::Io { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub type CliResult<T> = Result<T, CliError>;
