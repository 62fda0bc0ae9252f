use bandit_core::BanditError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] BanditError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Short identifier printed on the error line of the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Core(BanditError::InvalidArgument(_)) => "invalid-argument",
            Self::Core(BanditError::Unsupported(_)) => "unsupported",
            Self::Core(_) => "numerical",
            Self::Io(_) => "io",
            Self::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config(msg.into()))
}
