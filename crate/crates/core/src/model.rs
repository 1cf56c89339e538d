//! Raw records collected from the comment source.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRef {
    pub channel_id: String,
    #[serde(default)]
    pub display_name: String,
    #[serde(default)]
    pub last_fetch_at: Option<DateTime<Utc>>,
}

impl ChannelRef {
    pub fn new(channel_id: impl Into<String>) -> Self {
        ChannelRef {
            channel_id: channel_id.into(),
            display_name: String::new(),
            last_fetch_at: None,
        }
    }

    pub fn validate(&self, now: DateTime<Utc>) -> Result<()> {
        if self.channel_id.trim().is_empty() {
            return Err(Error::InvalidRecord {
                id: "<channel>".into(),
                reason: "channel_id is empty".into(),
            });
        }
        if matches!(self.last_fetch_at, Some(t) if t > now) {
            return Err(Error::InvalidRecord {
                id: self.channel_id.clone(),
                reason: "last_fetch_at is in the future".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub title: String,
    pub published_at: DateTime<Utc>,
    pub view_count: u64,
    pub like_count: u64,
    pub comment_count_reported: u64,
    pub fetched_at: DateTime<Utc>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.trim().is_empty() {
            return Err(Error::InvalidRecord {
                id: "<video>".into(),
                reason: "video_id is empty".into(),
            });
        }
        if self.published_at > self.fetched_at {
            return Err(Error::InvalidRecord {
                id: self.video_id.clone(),
                reason: "published_at is after fetched_at".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub video_id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub author_id: String,
    #[serde(default)]
    pub author_display: String,
    pub text: String,
    pub published_at: DateTime<Utc>,
    #[serde(default)]
    pub like_count: u64,
}

impl CommentRecord {
    pub fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn is_reply(&self) -> bool {
        self.parent_id.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.comment_id.trim().is_empty() {
            return Err(Error::InvalidRecord {
                id: "<comment>".into(),
                reason: "comment_id is empty".into(),
            });
        }
        if self.is_blank() {
            return Err(Error::InvalidRecord {
                id: self.comment_id.clone(),
                reason: "text is blank".into(),
            });
        }
        Ok(())
    }
}

/// Progress record for one fetch run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchManifest {
    pub channel_id: String,
    pub videos_fetched: u64,
    pub comments_fetched: u64,
    pub pages_consumed: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub resume_cursor: Option<String>,
}

impl FetchManifest {
    pub fn start(channel_id: impl Into<String>, now: DateTime<Utc>) -> Self {
        FetchManifest {
            channel_id: channel_id.into(),
            videos_fetched: 0,
            comments_fetched: 0,
            pages_consumed: 0,
            started_at: now,
            finished_at: None,
            resume_cursor: None,
        }
    }
}

/// Analysis scope: one video or the whole channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Channel,
    Video(String),
}

impl Scope {
    pub const CHANNEL_ID: &'static str = "channel";

    pub fn as_id(&self) -> &str {
        match self {
            Scope::Channel => Self::CHANNEL_ID,
            Scope::Video(id) => id,
        }
    }

    pub fn parse(id: &str) -> Scope {
        if id == Self::CHANNEL_ID {
            Scope::Channel
        } else {
            Scope::Video(id.to_string())
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_id())
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_id())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Scope::parse(&s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn blank_comment_is_rejected() {
        let c = CommentRecord {
            comment_id: "c1".into(),
            video_id: "v".into(),
            parent_id: None,
            author_id: "a".into(),
            author_display: "A".into(),
            text: " \n\t ".into(),
            published_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            like_count: 0,
        };
        assert!(c.is_blank());
        assert!(c.validate().is_err());
    }

    #[test]
    fn video_published_after_fetch_is_invalid() {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let v = VideoRecord {
            video_id: "v".into(),
            title: "t".into(),
            published_at: t + chrono::Duration::days(1),
            view_count: 0,
            like_count: 0,
            comment_count_reported: 0,
            fetched_at: t,
        };
        assert!(v.validate().is_err());
    }

    #[test]
    fn channel_scope_round_trips() {
        assert_eq!(Scope::parse("channel"), Scope::Channel);
        assert_eq!(Scope::parse("abc"), Scope::Video("abc".into()));
        let json = serde_json::to_string(&Scope::Video("x".into())).unwrap();
        assert_eq!(json, "\"x\"");
    }
}
