//! Fixture bundles: a directory holding `channel.json`, `videos.json` and
//! `comments.json`.

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{drop_blank, is_new, persist};
use crate::datastore::Store;
use crate::error::{Error, Result};
use crate::model::{ChannelRef, CommentRecord, FetchManifest, VideoRecord};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    channel_id: String,
    #[serde(default)]
    display_name: String,
    /// When the bundle's data was collected.
    #[serde(default)]
    fetched_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoFile {
    video_id: String,
    title: String,
    published_at: DateTime<Utc>,
    view_count: u64,
    like_count: u64,
    comment_count_reported: u64,
    #[serde(default)]
    fetched_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub channel: ChannelRef,
    pub fetched_at: Option<DateTime<Utc>>,
    pub videos: Vec<VideoRecord>,
    /// All parsed comments, blank ones included.
    pub comments: Vec<CommentRecord>,
}

fn read_json(dir: &Path, name: &str) -> Result<serde_json::Value> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::MalformedFixture { location: path.display().to_string(), reason: e.to_string() })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::MalformedFixture { location: path.display().to_string(), reason: e.to_string() })
}

fn records<T: DeserializeOwned>(dir: &Path, name: &str, id_field: &str) -> Result<Vec<T>> {
    let v = read_json(dir, name)?;
    let serde_json::Value::Array(items) = v else {
        return Err(Error::MalformedFixture { location: name.into(), reason: "expected a JSON array".into() });
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let id = item.get(id_field).and_then(|v| v.as_str()).map(str::to_string);
            serde_json::from_value(item).map_err(|e| Error::MalformedFixture {
                location: match id {
                    Some(id) => format!("{name}[{i}] ({id_field}={id})"),
                    None => format!("{name}[{i}]"),
                },
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Parse and check a bundle without touching the datastore.
pub fn load_bundle(dir: &Path, now: DateTime<Utc>) -> Result<FixtureBundle> {
    let ch: ChannelFile = serde_json::from_value(read_json(dir, "channel.json")?)
        .map_err(|e| Error::MalformedFixture { location: "channel.json".into(), reason: e.to_string() })?;
    if ch.channel_id.trim().is_empty() {
        return Err(Error::MalformedFixture { location: "channel.json".into(), reason: "channel_id is empty".into() });
    }
    let fetched_at = ch.fetched_at;
    let default_fetch = fetched_at.unwrap_or(now);
    let videos: Vec<VideoRecord> = records::<VideoFile>(dir, "videos.json", "video_id")?
        .into_iter()
        .map(|v| VideoRecord {
            video_id: v.video_id,
            title: v.title,
            published_at: v.published_at,
            view_count: v.view_count,
            like_count: v.like_count,
            comment_count_reported: v.comment_count_reported,
            fetched_at: v.fetched_at.unwrap_or(default_fetch),
        })
        .collect();
    let comments: Vec<CommentRecord> = records(dir, "comments.json", "comment_id")?;

    let mut seen = HashSet::new();
    for (i, v) in videos.iter().enumerate() {
        let loc = || format!("videos.json[{i}] (video_id={})", v.video_id);
        v.validate().map_err(|e| Error::MalformedFixture { location: loc(), reason: e.to_string() })?;
        if !seen.insert(v.video_id.as_str()) {
            return Err(Error::MalformedFixture { location: loc(), reason: "duplicate video_id".into() });
        }
    }
    let mut seen_c = HashSet::new();
    for (i, c) in comments.iter().enumerate() {
        let loc = || format!("comments.json[{i}] (comment_id={})", c.comment_id);
        if c.comment_id.trim().is_empty() {
            return Err(Error::MalformedFixture { location: loc(), reason: "comment_id is empty".into() });
        }
        if !seen_c.insert(c.comment_id.as_str()) {
            return Err(Error::MalformedFixture { location: loc(), reason: "duplicate comment_id".into() });
        }
        if !seen.contains(c.video_id.as_str()) {
            return Err(Error::MalformedFixture {
                location: loc(),
                reason: format!("references unknown video {}", c.video_id),
            });
        }
    }
    let channel = ChannelRef { channel_id: ch.channel_id, display_name: ch.display_name, last_fetch_at: None };
    Ok(FixtureBundle { channel, fetched_at, videos, comments })
}

/// Full ingest of a bundle. The channel's `last_fetch_at` becomes the
/// bundle's `fetched_at` (or `now` when absent).
pub fn ingest_fixture(store: &Store, dir: &Path, now: DateTime<Utc>) -> Result<FetchManifest> {
    ingest_bundle(store, load_bundle(dir, now)?, now, false)
}

/// Incremental ingest: only comments published after the channel's last
/// fetch are added; every video is refreshed. Same as a full ingest when
/// nothing was fetched before.
pub fn sync_fixture(store: &Store, dir: &Path, now: DateTime<Utc>) -> Result<FetchManifest> {
    ingest_bundle(store, load_bundle(dir, now)?, now, true)
}

fn ingest_bundle(store: &Store, bundle: FixtureBundle, now: DateTime<Utc>, incremental: bool) -> Result<FetchManifest> {
    let _lock = store.ingest_lock()?;
    let previous = store.channel()?;
    if let Some(p) = &previous {
        if p.channel_id != bundle.channel.channel_id {
            return Err(Error::InvalidArgument(format!(
                "datastore belongs to channel {}, bundle is for {}",
                p.channel_id, bundle.channel.channel_id
            )));
        }
    }
    let since = if incremental { previous.as_ref().and_then(|p| p.last_fetch_at) } else { None };
    let mut manifest = FetchManifest::start(&bundle.channel.channel_id, now);
    let comments: Vec<CommentRecord> =
        drop_blank(bundle.comments).into_iter().filter(|c| is_new(c.published_at, since)).collect();
    persist(store, &bundle.videos, &comments)?;
    manifest.videos_fetched = bundle.videos.len() as u64;
    manifest.comments_fetched = comments.len() as u64;
    manifest.pages_consumed = 1;
    let fetched = bundle.fetched_at.unwrap_or(now);
    let mut channel = bundle.channel;
    if channel.display_name.is_empty() {
        if let Some(p) = &previous {
            channel.display_name = p.display_name.clone();
        }
    }
    channel.last_fetch_at = Some(match previous.and_then(|p| p.last_fetch_at) {
        Some(prev) if prev > fetched => prev,
        _ => fetched,
    });
    store.set_channel(&channel)?;
    manifest.finished_at = Some(now);
    store.save_manifest(&manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::View;
    use chrono::TimeZone;
    use serde_json::json;

    fn t(d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, d, 0, 0, 0).unwrap()
    }

    fn write(dir: &Path, videos: serde_json::Value, comments: serde_json::Value, fetched: DateTime<Utc>) {
        std::fs::write(
            dir.join("channel.json"),
            json!({"channel_id": "UC1", "display_name": "Docs", "fetched_at": fetched}).to_string(),
        )
        .unwrap();
        std::fs::write(dir.join("videos.json"), videos.to_string()).unwrap();
        std::fs::write(dir.join("comments.json"), comments.to_string()).unwrap();
    }

    fn v(id: &str) -> serde_json::Value {
        json!({"video_id": id, "title": id, "published_at": t(1), "view_count": 1, "like_count": 0, "comment_count_reported": 3})
    }

    fn c(id: usize, text: &str, day: u32) -> serde_json::Value {
        json!({"comment_id": format!("c{id}"), "video_id": "v1", "parent_id": null, "author_id": "a",
               "author_display": "A", "text": text, "published_at": t(day), "like_count": 0})
    }

    #[test]
    fn blank_comments_dropped_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut cs: Vec<_> = (0..9).map(|i| c(i, "hello there", 2)).collect();
        cs.push(c(9, "   \n", 2));
        write(dir.path(), json!([v("v1")]), json!(cs), t(5));
        let store = Store::open(dir.path().join("db.sqlite")).unwrap();
        let m = ingest_fixture(&store, dir.path(), t(6)).unwrap();
        assert_eq!((m.videos_fetched, m.comments_fetched), (1, 9));
        ingest_fixture(&store, dir.path(), t(7)).unwrap();
        assert_eq!(store.comment_count(View::Working).unwrap(), 9);
        assert_eq!(store.channel().unwrap().unwrap().last_fetch_at, Some(t(5)));
    }

    #[test]
    fn empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), json!([]), json!([]), t(5));
        let store = Store::open(dir.path().join("db.sqlite")).unwrap();
        let m = ingest_fixture(&store, dir.path(), t(6)).unwrap();
        assert_eq!((m.videos_fetched, m.comments_fetched), (0, 0));
    }

    #[test]
    fn malformed_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = c(3, "x", 2);
        bad.as_object_mut().unwrap().remove("author_id");
        write(dir.path(), json!([v("v1")]), json!([c(1, "x", 2), bad]), t(5));
        let err = load_bundle(dir.path(), t(6)).unwrap_err();
        match err {
            Error::MalformedFixture { location, reason } => {
                assert_eq!(location, "comments.json[1] (comment_id=c3)");
                assert!(reason.contains("author_id"));
            }
            e => panic!("{e}"),
        }
        write(dir.path(), json!([v("v1")]), json!([json!({"comment_id": "x", "video_id": "v9", "author_id": "a", "author_display": "A", "text": "t", "published_at": t(1), "like_count": 0})]), t(5));
        assert!(matches!(load_bundle(dir.path(), t(6)), Err(Error::MalformedFixture { .. })));
    }

    #[test]
    fn incremental_adds_only_newer() {
        let dir = tempfile::tempdir().unwrap();
        let base: Vec<_> = (0..10).map(|i| c(i, "old comment", 2)).collect();
        write(dir.path(), json!([v("v1")]), json!(base), t(5));
        let store = Store::open(dir.path().join("db.sqlite")).unwrap();
        ingest_fixture(&store, dir.path(), t(5)).unwrap();

        let m = sync_fixture(&store, dir.path(), t(6)).unwrap();
        assert_eq!(m.comments_fetched, 0);

        let mut next = base.clone();
        for i in 10..15 {
            next.push(c(i, "new comment", 8));
        }
        write(dir.path(), json!([v("v1")]), json!(next), t(9));
        let m = sync_fixture(&store, dir.path(), t(9)).unwrap();
        assert_eq!(m.comments_fetched, 5);
        assert_eq!(store.comment_count(View::Working).unwrap(), 15);
        assert_eq!(store.channel().unwrap().unwrap().last_fetch_at, Some(t(9)));
    }
}
