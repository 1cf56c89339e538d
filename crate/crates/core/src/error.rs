use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("comment {comment_id} references unknown video {video_id}")]
    UnknownVideo { comment_id: String, video_id: String },

    #[error("video not found: {0}")]
    VideoNotFound(String),

    #[error("snapshot not found: {0}")]
    SnapshotNotFound(u64),

    #[error("no snapshot has been published")]
    NoSnapshot,

    #[error("another publish is in progress")]
    PublishInProgress,

    #[error("another ingest is running for this channel")]
    IngestLocked,

    #[error("invalid page bounds: {0}")]
    InvalidPage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config field `{field}` is invalid: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed fixture bundle at {location}: {reason}")]
    MalformedFixture { location: String, reason: String },

    #[error("stage `{stage}` requires `{missing}`, which has not been computed")]
    MissingDependency { stage: String, missing: String },

    #[error("nothing to analyze: no videos ingested")]
    IngestEmpty,

    #[error("scope `{0}` has no comments")]
    EmptyScope(String),

    #[error("model unavailable: {0}")]
    ModelUnavailable(String),

    #[error("youtube: {0}")]
    Source(#[from] crate::ingestion::SourceError),

    #[error("llm: {0}")]
    Llm(#[from] crate::llm::LlmError),

    #[error("storage: {0}")]
    Storage(#[from] rusqlite::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code used by the CLI and HTTP layers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRecord { .. } => "invalid_record",
            Error::UnknownVideo { .. } => "unknown_video",
            Error::VideoNotFound(_) => "video_not_found",
            Error::SnapshotNotFound(_) => "snapshot_not_found",
            Error::NoSnapshot => "no_snapshot",
            Error::PublishInProgress => "publish_in_progress",
            Error::IngestLocked => "ingest_locked",
            Error::InvalidPage(_) => "invalid_page",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config { .. } => "config_invalid",
            Error::MalformedFixture { .. } => "malformed_fixture",
            Error::MissingDependency { .. } => "missing_dependency",
            Error::IngestEmpty => "ingest_empty",
            Error::EmptyScope(_) => "empty_scope",
            Error::ModelUnavailable(_) => "model_unavailable",
            Error::Source(e) => e.code(),
            Error::Llm(_) => "llm_error",
            Error::Storage(_) => "storage_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
