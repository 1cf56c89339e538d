//! Core library for `commentscope`: collects a channel's videos and comments,
//! stores them with immutable published snapshots, and precomputes the
//! analyses served to the dashboard (sentiment, statistics, word clouds,
//! topic clusters, LLM themes and suggestions, change alerts, superfans).

pub mod alerts;
pub mod analytics;
pub mod canonical;
pub mod config;
pub mod datastore;
pub mod error;
pub mod ingestion;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod sentiment;
pub mod text;
pub mod themes;
pub mod topics;

pub use error::{Error, Result};
pub use model::{ChannelRef, CommentRecord, FetchManifest, VideoRecord};
