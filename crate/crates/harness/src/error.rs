use thiserror::Error;

/// Process exit codes of the `aloha` binary.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NO_STABLE_POINT: i32 = 3;
    pub const INVARIANT: i32 = 4;
    pub const UNSTABLE_QUEUE: i32 = 5;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] aloha_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// The analysed queue has unbounded mean delay at its operating point.
    #[error("unstable queue: {0}")]
    UnstableQueue(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        use aloha_core::Error as E;
        match self {
            HarnessError::Core(E::NoStablePoint { .. }) => exit_code::NO_STABLE_POINT,
            HarnessError::Core(E::InvariantViolation { .. }) => exit_code::INVARIANT,
            HarnessError::Core(_) | HarnessError::Config(_) => exit_code::CONFIG,
            HarnessError::Io(_) => exit_code::IO,
            HarnessError::Csv(e) if e.is_io_error() => exit_code::IO,
            HarnessError::Csv(_) => exit_code::CONFIG,
            HarnessError::UnstableQueue(_) => exit_code::UNSTABLE_QUEUE,
        }
    }
}

impl From<toml::de::Error> for HarnessError {
    fn from(e: toml::de::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
