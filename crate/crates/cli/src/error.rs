use thiserror::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown kind `{tag}` at {path}")]
    UnknownKind { path: String, tag: String },
    #[error("invalid input at {path}: {message}")]
    Input { path: String, message: String },
    #[error("{context}: {source}")]
    Numeric {
        context: String,
        source: simplexflow::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: &str, e: simplexflow::Error) -> Self {
        CliError::Input {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn invalid(path: &str, message: &str) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn numeric(context: &str, source: simplexflow::Error) -> Self {
        CliError::Numeric {
            context: context.into(),
            source,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}
