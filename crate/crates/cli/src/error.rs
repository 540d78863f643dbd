use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        #[source]
        source: mdtail_core::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("certification failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mdtail_core::Error as E;
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core { source, .. } => match source {
                E::Numeric { .. } => 3,
                E::Domain(_) | E::Precondition(_) | E::Parse { .. } | E::Budget(_) => 2,
            },
            CliError::Io(_) => 3,
        }
    }
}

/// Attaches the command name to a core error.
pub trait Context<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for mdtail_core::Result<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context, source })
    }
}
