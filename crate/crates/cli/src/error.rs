use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: perturbvar::Error,
    },

    #[error(transparent)]
    Core(#[from] perturbvar::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 config, 3 I/O, 4 numeric or validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Load { .. } => 3,
            CliError::Core(e) => match e {
                perturbvar::Error::Io(_) | perturbvar::Error::Image(_) | perturbvar::Error::Format { .. } => 3,
                perturbvar::Error::UnknownTap { .. } => 2,
                _ => 4,
            },
        }
    }
}
