//! Collecting channel, video and comment records into the datastore, from
//! the YouTube Data API or from a fixture bundle on disk.

pub mod fixture;
pub mod youtube;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use fixture::{ingest_fixture, load_bundle, sync_fixture, FixtureBundle};
pub use youtube::{fetch_channel, ResumeCursor, YouTubeClient, YouTubeOptions};

use crate::datastore::Store;
use crate::error::Result;
use crate::model::{CommentRecord, VideoRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    #[error("API credential rejected: {0}")]
    CredentialInvalid(String),
    #[error("quota exhausted; resume with the saved cursor")]
    QuotaExhausted { resume_cursor: String },
    #[error("channel not found: {0}")]
    ChannelNotFound(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl SourceError {
    pub fn code(&self) -> &'static str {
        match self {
            SourceError::CredentialInvalid(_) => "credential_invalid",
            SourceError::QuotaExhausted { .. } => "quota_exhausted",
            SourceError::ChannelNotFound(_) => "channel_not_found",
            SourceError::Http { .. } => "source_http_error",
            SourceError::Transport(_) => "source_unreachable",
            SourceError::Decode(_) => "source_decode_error",
        }
    }
}

/// Drop blank comments; returns the kept records.
pub fn drop_blank(comments: Vec<CommentRecord>) -> Vec<CommentRecord> {
    let before = comments.len();
    let kept: Vec<CommentRecord> = comments.into_iter().filter(|c| !c.is_blank()).collect();
    if kept.len() < before {
        tracing::info!(dropped = before - kept.len(), "dropped blank comments");
    }
    kept
}

/// Persist one batch: videos first so comments always resolve.
pub(crate) fn persist(store: &Store, videos: &[VideoRecord], comments: &[CommentRecord]) -> Result<()> {
    if !videos.is_empty() {
        store.upsert_videos(videos)?;
    }
    if !comments.is_empty() {
        store.upsert_comments(comments)?;
    }
    Ok(())
}

/// `published_at` strictly after the last fetch, or everything when there
/// was none.
pub fn is_new(published_at: DateTime<Utc>, since: Option<DateTime<Utc>>) -> bool {
    since.is_none_or(|s| published_at > s)
}
