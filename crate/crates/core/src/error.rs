use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observation {observation} has zero likelihood under the current belief")]
    ZeroLikelihood { observation: usize },

    #[error("history {0} is not reachable under the model")]
    UnreachableHistory(String),

    #[error("exact enumeration would exceed the size cap of {limit} histories")]
    SizeLimitExceeded { limit: usize },

    #[error("layout error at line {line}, column {column}: {message}")]
    Layout {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("format error at record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("missing embedding for history {0}")]
    MissingEmbedding(String),

    #[error("no model entry for cluster {cluster}, action {action}")]
    MissingModelEntry { cluster: usize, action: usize },

    #[error("history {0} is not assigned to any cluster")]
    UnassignedHistory(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used for CLI exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroLikelihood { .. } => "zero_likelihood",
            Error::UnreachableHistory(_) => "unreachable_history",
            Error::SizeLimitExceeded { .. } => "size_limit_exceeded",
            Error::Layout { .. } => "layout_error",
            Error::Vocabulary(_) => "vocabulary_error",
            Error::Format { .. } => "format_error",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::MissingModelEntry { .. } => "missing_model_entry",
            Error::UnassignedHistory(_) => "unassigned_history",
            Error::InvalidModel(_) => "invalid_model",
            Error::Config(_) => "config_error",
            Error::Io(_) => "io_error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Layout { .. } | Error::Vocabulary(_) => 3,
            Error::SizeLimitExceeded { .. } => 4,
            Error::Io(_) => 5,
            _ => 1,
        }
    }
}
