use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(#[from] toml::de::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] ddft_core::Error),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures of the run itself.
    pub fn exit_code(&self) -> u8 {
        use ddft_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(
                E::InvalidGrid(_)
                | E::InvalidParameter(_)
                | E::UnsupportedInteraction(_)
                | E::ClosureUnavailable(_)
                | E::BudgetExceeded { .. }
                | E::UnknownName(_)
                | E::OrderTooHigh { .. }
                | E::TooFewFrames { .. },
            ) => 1,
            CliError::Core(_) => 2,
        }
    }
}
