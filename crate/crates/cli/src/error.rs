use std::fmt;

use lossforge::error::ErrorClass;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    /// Missing or contradictory arguments.
    Usage(String),
    /// Unreadable or invalid input outside the library (config, output dir).
    Validation(String),
    /// A library failure, with the input it concerns.
    Core {
        context: Option<String>,
        source: lossforge::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core { source, .. } => match source.class() {
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }

    pub fn within(context: impl fmt::Display) -> impl FnOnce(lossforge::Error) -> CliError {
        let context = context.to_string();
        move |source| CliError::Core {
            context: Some(context),
            source,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m} (see --help)"),
            CliError::Validation(m) => f.write_str(m),
            CliError::Core { context: Some(c), source } => write!(f, "{c}: {source}"),
            CliError::Core { context: None, source } => write!(f, "{source}"),
        }
    }
}

impl From<lossforge::Error> for CliError {
    fn from(source: lossforge::Error) -> Self {
        CliError::Core { context: None, source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core {
            context: None,
            source: lossforge::Error::Io(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
