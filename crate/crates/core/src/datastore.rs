//! Single-file SQLite store for raw records, computed artifacts, and
//! published snapshots.
//!
//! Record rows are versioned by snapshot: a row is visible in snapshot `s`
//! when `valid_from <= s` and it was not superseded at or before `s`. Upserts
//! write into the pending version (`latest published id + 1`), so published
//! snapshots never change underneath a reader. Artifact blobs are
//! content-addressed; a snapshot's artifact index points at blob hashes, so
//! overwriting an artifact key later never alters what an older snapshot
//! serves.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, params_from_iter, Connection, OptionalExtension, Row, ToSql, Transaction};
use serde::{Deserialize, Serialize};

use crate::canonical::sha256_hex;
use crate::error::{Error, Result};
use crate::model::{ChannelRef, CommentRecord, FetchManifest, Scope, VideoRecord};

pub const MAX_PAGE_SIZE: u32 = 500;
const POOL_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Sentiment,
    Topics,
    ThemesVideo,
    ThemesChannel,
    SuggestionsVideo,
    SuggestionsChannel,
    Alerts,
    Stats,
    Wordcloud,
    Superfans,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 10] = [
        ArtifactKind::Sentiment,
        ArtifactKind::Topics,
        ArtifactKind::ThemesVideo,
        ArtifactKind::ThemesChannel,
        ArtifactKind::SuggestionsVideo,
        ArtifactKind::SuggestionsChannel,
        ArtifactKind::Alerts,
        ArtifactKind::Stats,
        ArtifactKind::Wordcloud,
        ArtifactKind::Superfans,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Sentiment => "sentiment",
            ArtifactKind::Topics => "topics",
            ArtifactKind::ThemesVideo => "themes_video",
            ArtifactKind::ThemesChannel => "themes_channel",
            ArtifactKind::SuggestionsVideo => "suggestions_video",
            ArtifactKind::SuggestionsChannel => "suggestions_channel",
            ArtifactKind::Alerts => "alerts",
            ArtifactKind::Stats => "stats",
            ArtifactKind::Wordcloud => "wordcloud",
            ArtifactKind::Superfans => "superfans",
        }
    }

    pub fn parse(s: &str) -> Option<ArtifactKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactKey {
    pub kind: ArtifactKind,
    pub scope_id: Scope,
    pub config_digest: String,
}

impl ArtifactKey {
    pub fn new(kind: ArtifactKind, scope: Scope, config_digest: impl Into<String>) -> Self {
        ArtifactKey { kind, scope_id: scope, config_digest: config_digest.into() }
    }

    fn validate(&self) -> Result<()> {
        if self.config_digest.is_empty() {
            return Err(Error::InvalidArgument("artifact key has empty config_digest".into()));
        }
        if self.scope_id.as_id().is_empty() {
            return Err(Error::InvalidArgument("artifact key has empty scope".into()));
        }
        Ok(())
    }

    /// Index slot within a snapshot: one artifact per (kind, scope).
    pub fn slot(&self) -> String {
        slot(self.kind, &self.scope_id)
    }
}

pub fn slot(kind: ArtifactKind, scope: &Scope) -> String {
    format!("{}/{}", kind.as_str(), scope.as_id())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: ArtifactKind,
    pub scope_id: Scope,
    pub config_digest: String,
    /// sha256 of the blob bytes.
    pub blob: String,
}

pub type ArtifactIndex = BTreeMap<String, ArtifactRef>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSnapshot {
    pub snapshot_id: u64,
    pub created_at: DateTime<Utc>,
    pub video_count: u64,
    pub comment_count: u64,
    pub artifact_index: ArtifactIndex,
    /// Partial failures recorded during the run, keyed by stage/scope.
    #[serde(default)]
    pub degraded: BTreeMap<String, String>,
}

impl CorpusSnapshot {
    pub fn artifact(&self, kind: ArtifactKind, scope: &Scope) -> Option<&ArtifactRef> {
        self.artifact_index.get(&slot(kind, scope))
    }

    pub fn kinds(&self) -> std::collections::BTreeSet<ArtifactKind> {
        self.artifact_index.values().map(|r| r.kind).collect()
    }
}

/// Which version of the record tables a read sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Latest written rows, including unpublished ones.
    Working,
    Snapshot(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentFilter {
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default)]
    pub author_id: Option<String>,
    /// Inclusive lower bound.
    #[serde(default)]
    pub since: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    #[serde(default)]
    pub until: Option<DateTime<Utc>>,
    /// Case-insensitive (ASCII) substring match on the comment text.
    #[serde(default)]
    pub text_substring: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    /// 1-based page number.
    pub page: u32,
    pub page_size: u32,
    pub total: u64,
}

impl<T> Page<T> {
    pub fn total_pages(&self) -> u64 {
        self.total.div_ceil(u64::from(self.page_size.max(1)))
    }
}

pub fn check_page(page: u32, page_size: u32) -> Result<()> {
    if page == 0 {
        return Err(Error::InvalidPage("page numbers start at 1".into()));
    }
    if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
        return Err(Error::InvalidPage(format!("page_size must be in [1, {MAX_PAGE_SIZE}]")));
    }
    Ok(())
}

pub(crate) fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Nanos, true)
}

fn parse_ts(s: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e)))
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS videos (
    video_id               TEXT NOT NULL,
    valid_from             INTEGER NOT NULL,
    valid_to               INTEGER,
    title                  TEXT NOT NULL,
    published_at           TEXT NOT NULL,
    view_count             INTEGER NOT NULL,
    like_count             INTEGER NOT NULL,
    comment_count_reported INTEGER NOT NULL,
    fetched_at             TEXT NOT NULL,
    PRIMARY KEY (video_id, valid_from)
);
CREATE TABLE IF NOT EXISTS comments (
    comment_id     TEXT NOT NULL,
    valid_from     INTEGER NOT NULL,
    valid_to       INTEGER,
    video_id       TEXT NOT NULL,
    parent_id      TEXT,
    author_id      TEXT NOT NULL,
    author_display TEXT NOT NULL,
    text           TEXT NOT NULL,
    published_at   TEXT NOT NULL,
    like_count     INTEGER NOT NULL,
    PRIMARY KEY (comment_id, valid_from)
);
CREATE INDEX IF NOT EXISTS comments_live ON comments (comment_id) WHERE valid_to IS NULL;
CREATE INDEX IF NOT EXISTS comments_order ON comments (published_at, comment_id);
CREATE INDEX IF NOT EXISTS comments_video ON comments (video_id, published_at, comment_id);
CREATE INDEX IF NOT EXISTS comments_author ON comments (author_id, published_at, comment_id);
CREATE TABLE IF NOT EXISTS blobs (
    hash TEXT PRIMARY KEY,
    body BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS artifacts (
    kind          TEXT NOT NULL,
    scope_id      TEXT NOT NULL,
    config_digest TEXT NOT NULL,
    blob_hash     TEXT NOT NULL REFERENCES blobs(hash),
    PRIMARY KEY (kind, scope_id, config_digest)
);
CREATE TABLE IF NOT EXISTS llm_cache (
    digest   TEXT PRIMARY KEY,
    response TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS snapshots (
    snapshot_id    INTEGER PRIMARY KEY,
    created_at     TEXT NOT NULL,
    video_count    INTEGER NOT NULL,
    comment_count  INTEGER NOT NULL,
    artifact_index TEXT NOT NULL,
    degraded       TEXT NOT NULL,
    is_current     INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS manifests (
    id         INTEGER PRIMARY KEY AUTOINCREMENT,
    channel_id TEXT NOT NULL,
    body       TEXT NOT NULL
);
";

struct Inner {
    path: PathBuf,
    pool: Mutex<Vec<Connection>>,
}

/// Handle to the on-disk store. Cheap to clone; connections are pooled.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

/// Held while an exclusive file lock is taken; released on drop.
#[derive(Debug)]
pub struct LockGuard {
    file: File,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

fn visible(view: View, params: &mut Vec<Box<dyn ToSql>>) -> String {
    match view {
        View::Working => "valid_to IS NULL".to_string(),
        View::Snapshot(s) => {
            params.push(Box::new(s as i64));
            params.push(Box::new(s as i64));
            format!(
                "valid_from <= ?{} AND (valid_to IS NULL OR valid_to > ?{})",
                params.len() - 1,
                params.len()
            )
        }
    }
}

const VIDEO_COLS: &str =
    "video_id, title, published_at, view_count, like_count, comment_count_reported, fetched_at";
const COMMENT_COLS: &str =
    "comment_id, video_id, parent_id, author_id, author_display, text, published_at, like_count";

fn video_from_row(r: &Row<'_>) -> rusqlite::Result<VideoRecord> {
    Ok(VideoRecord {
        video_id: r.get(0)?,
        title: r.get(1)?,
        published_at: parse_ts(&r.get::<_, String>(2)?)?,
        view_count: r.get::<_, i64>(3)? as u64,
        like_count: r.get::<_, i64>(4)? as u64,
        comment_count_reported: r.get::<_, i64>(5)? as u64,
        fetched_at: parse_ts(&r.get::<_, String>(6)?)?,
    })
}

fn comment_from_row(r: &Row<'_>) -> rusqlite::Result<CommentRecord> {
    Ok(CommentRecord {
        comment_id: r.get(0)?,
        video_id: r.get(1)?,
        parent_id: r.get(2)?,
        author_id: r.get(3)?,
        author_display: r.get(4)?,
        text: r.get(5)?,
        published_at: parse_ts(&r.get::<_, String>(6)?)?,
        like_count: r.get::<_, i64>(7)? as u64,
    })
}

fn pending_version(tx: &Transaction<'_>) -> Result<i64> {
    let latest: Option<i64> =
        tx.query_row("SELECT MAX(snapshot_id) FROM snapshots", [], |r| r.get(0))?;
    Ok(latest.unwrap_or(0) + 1)
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Store> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let conn = Self::connect(&path)?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store {
            inner: Arc::new(Inner { path, pool: Mutex::new(vec![conn]) }),
        })
    }

    fn connect(path: &Path) -> Result<Connection> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        Ok(conn)
    }

    pub fn path(&self) -> &Path {
        &self.inner.path
    }

    fn with_conn<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T>) -> Result<T> {
        let taken = self.inner.pool.lock().expect("pool poisoned").pop();
        let mut conn = match taken {
            Some(c) => c,
            None => Self::connect(&self.inner.path)?,
        };
        let out = f(&mut conn);
        let mut pool = self.inner.pool.lock().expect("pool poisoned");
        if pool.len() < POOL_CAP {
            pool.push(conn);
        }
        out
    }

    fn lock_file(&self, suffix: &str) -> Result<File> {
        let mut p = self.inner.path.clone().into_os_string();
        p.push(suffix);
        Ok(OpenOptions::new().create(true).truncate(false).write(true).open(PathBuf::from(p))?)
    }

    /// Channel-level ingest lock. Fails immediately if held elsewhere.
    pub fn ingest_lock(&self) -> Result<LockGuard> {
        let file = self.lock_file(".ingest.lock")?;
        match file.try_lock() {
            Ok(()) => Ok(LockGuard { file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(Error::IngestLocked),
            Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    fn publish_lock(&self) -> Result<LockGuard> {
        let file = self.lock_file(".publish.lock")?;
        match file.try_lock() {
            Ok(()) => Ok(LockGuard { file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(Error::PublishInProgress),
            Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    // ---- channel ----

    pub fn channel(&self) -> Result<Option<ChannelRef>> {
        self.with_conn(|c| {
            let v: Option<String> = c
                .query_row("SELECT value FROM meta WHERE key = 'channel'", [], |r| r.get(0))
                .optional()?;
            Ok(v.map(|s| serde_json::from_str(&s)).transpose()?)
        })
    }

    pub fn set_channel(&self, channel: &ChannelRef) -> Result<()> {
        let body = serde_json::to_string(channel)?;
        self.with_conn(|c| {
            c.execute(
                "INSERT INTO meta (key, value) VALUES ('channel', ?1)
                 ON CONFLICT(key) DO UPDATE SET value = excluded.value",
                params![body],
            )?;
            Ok(())
        })
    }

    // ---- records ----

    /// Insert or replace videos by `video_id`. Returns the number of rows
    /// whose stored content changed. Any invalid record rejects the batch.
    pub fn upsert_videos(&self, records: &[VideoRecord]) -> Result<usize> {
        for r in records {
            r.validate()?;
        }
        self.with_conn(|c| {
            let tx = c.transaction()?;
            let pending = pending_version(&tx)?;
            let mut changed = 0;
            {
                let mut live = tx.prepare_cached(&format!(
                    "SELECT {VIDEO_COLS}, valid_from FROM videos WHERE video_id = ?1 AND valid_to IS NULL"
                ))?;
                let mut insert = tx.prepare_cached(
                    "INSERT INTO videos (video_id, valid_from, valid_to, title, published_at, view_count,
                        like_count, comment_count_reported, fetched_at)
                     VALUES (?1, ?2, NULL, ?3, ?4, ?5, ?6, ?7, ?8)
                     ON CONFLICT(video_id, valid_from) DO UPDATE SET
                        title = excluded.title, published_at = excluded.published_at,
                        view_count = excluded.view_count, like_count = excluded.like_count,
                        comment_count_reported = excluded.comment_count_reported,
                        fetched_at = excluded.fetched_at",
                )?;
                let mut retire = tx.prepare_cached(
                    "UPDATE videos SET valid_to = ?2 WHERE video_id = ?1 AND valid_to IS NULL",
                )?;
                for r in records {
                    let existing = live
                        .query_row(params![r.video_id], |row| {
                            Ok((video_from_row(row)?, row.get::<_, i64>(7)?))
                        })
                        .optional()?;
                    match existing {
                        Some((old, _)) if &old == r => continue,
                        Some((_, from)) if from != pending => {
                            retire.execute(params![r.video_id, pending])?;
                        }
                        _ => {}
                    }
                    insert.execute(params![
                        r.video_id,
                        pending,
                        r.title,
                        ts(&r.published_at),
                        r.view_count as i64,
                        r.like_count as i64,
                        r.comment_count_reported as i64,
                        ts(&r.fetched_at),
                    ])?;
                    changed += 1;
                }
            }
            tx.commit()?;
            Ok(changed)
        })
    }

    /// Insert or replace comments by `comment_id` (latest write wins).
    /// Every comment must reference a stored video; any violation rejects
    /// the whole batch.
    pub fn upsert_comments(&self, records: &[CommentRecord]) -> Result<usize> {
        for r in records {
            r.validate()?;
        }
        self.with_conn(|c| {
            let tx = c.transaction()?;
            let pending = pending_version(&tx)?;
            let mut changed = 0;
            {
                let mut video_exists = tx.prepare_cached(
                    "SELECT 1 FROM videos WHERE video_id = ?1 AND valid_to IS NULL",
                )?;
                let mut live = tx.prepare_cached(&format!(
                    "SELECT {COMMENT_COLS}, valid_from FROM comments
                     WHERE comment_id = ?1 AND valid_to IS NULL"
                ))?;
                let mut insert = tx.prepare_cached(
                    "INSERT INTO comments (comment_id, valid_from, valid_to, video_id, parent_id,
                        author_id, author_display, text, published_at, like_count)
                     VALUES (?1, ?2, NULL, ?3, ?4, ?5, ?6, ?7, ?8, ?9)
                     ON CONFLICT(comment_id, valid_from) DO UPDATE SET
                        video_id = excluded.video_id, parent_id = excluded.parent_id,
                        author_id = excluded.author_id, author_display = excluded.author_display,
                        text = excluded.text, published_at = excluded.published_at,
                        like_count = excluded.like_count",
                )?;
                let mut retire = tx.prepare_cached(
                    "UPDATE comments SET valid_to = ?2 WHERE comment_id = ?1 AND valid_to IS NULL",
                )?;
                let mut known_videos = std::collections::HashSet::new();
                for r in records {
                    if !known_videos.contains(r.video_id.as_str()) {
                        if !video_exists.exists(params![r.video_id])? {
                            // Dropping the transaction rolls back the batch.
                            return Err(Error::UnknownVideo {
                                comment_id: r.comment_id.clone(),
                                video_id: r.video_id.clone(),
                            });
                        }
                        known_videos.insert(r.video_id.as_str());
                    }
                    let existing = live
                        .query_row(params![r.comment_id], |row| {
                            Ok((comment_from_row(row)?, row.get::<_, i64>(8)?))
                        })
                        .optional()?;
                    match existing {
                        Some((old, _)) if &old == r => continue,
                        Some((_, from)) if from != pending => {
                            retire.execute(params![r.comment_id, pending])?;
                        }
                        _ => {}
                    }
                    insert.execute(params![
                        r.comment_id,
                        pending,
                        r.video_id,
                        r.parent_id,
                        r.author_id,
                        r.author_display,
                        r.text,
                        ts(&r.published_at),
                        r.like_count as i64,
                    ])?;
                    changed += 1;
                }
            }
            tx.commit()?;
            Ok(changed)
        })
    }

    pub fn videos(&self, view: View) -> Result<Vec<VideoRecord>> {
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = Vec::new();
            let vis = visible(view, &mut p);
            let mut st = c.prepare(&format!(
                "SELECT {VIDEO_COLS} FROM videos WHERE {vis} ORDER BY video_id"
            ))?;
            let rows = st.query_map(params_from_iter(p.iter()), video_from_row)?;
            Ok(rows.collect::<rusqlite::Result<Vec<_>>>()?)
        })
    }

    pub fn video(&self, view: View, video_id: &str) -> Result<Option<VideoRecord>> {
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = vec![Box::new(video_id.to_string())];
            let vis = visible(view, &mut p);
            let mut st = c.prepare(&format!(
                "SELECT {VIDEO_COLS} FROM videos WHERE video_id = ?1 AND {vis}"
            ))?;
            Ok(st.query_row(params_from_iter(p.iter()), video_from_row).optional()?)
        })
    }

    /// Every visible comment, ordered by (published_at, comment_id).
    pub fn all_comments(&self, view: View) -> Result<Vec<CommentRecord>> {
        self.comments_where(view, None)
    }

    /// A video's comments, ordered by (published_at, comment_id).
    pub fn comments_for_video(&self, view: View, video_id: &str) -> Result<Vec<CommentRecord>> {
        self.comments_where(view, Some(video_id))
    }

    fn comments_where(&self, view: View, video_id: Option<&str>) -> Result<Vec<CommentRecord>> {
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = Vec::new();
            let mut cond = String::new();
            if let Some(v) = video_id {
                p.push(Box::new(v.to_string()));
                cond = "video_id = ?1 AND ".into();
            }
            let vis = visible(view, &mut p);
            let mut st = c.prepare(&format!(
                "SELECT {COMMENT_COLS} FROM comments WHERE {cond}{vis}
                 ORDER BY published_at, comment_id"
            ))?;
            let rows = st.query_map(params_from_iter(p.iter()), comment_from_row)?;
            Ok(rows.collect::<rusqlite::Result<Vec<_>>>()?)
        })
    }

    pub fn comment_count(&self, view: View) -> Result<u64> {
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = Vec::new();
            let vis = visible(view, &mut p);
            let n: i64 = c.query_row(
                &format!("SELECT COUNT(*) FROM comments WHERE {vis}"),
                params_from_iter(p.iter()),
                |r| r.get(0),
            )?;
            Ok(n as u64)
        })
    }

    pub fn video_count(&self, view: View) -> Result<u64> {
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = Vec::new();
            let vis = visible(view, &mut p);
            let n: i64 = c.query_row(
                &format!("SELECT COUNT(*) FROM videos WHERE {vis}"),
                params_from_iter(p.iter()),
                |r| r.get(0),
            )?;
            Ok(n as u64)
        })
    }

    /// Fetch comments by ID, returned in the order of `ids`; IDs not
    /// visible in `view` are skipped.
    pub fn comments_by_ids(&self, view: View, ids: &[String]) -> Result<Vec<CommentRecord>> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.with_conn(|c| {
            let mut found = std::collections::HashMap::with_capacity(ids.len());
            for chunk in ids.chunks(400) {
                let mut p: Vec<Box<dyn ToSql>> =
                    chunk.iter().map(|s| Box::new(s.clone()) as Box<dyn ToSql>).collect();
                let placeholders =
                    (1..=chunk.len()).map(|i| format!("?{i}")).collect::<Vec<_>>().join(",");
                let vis = visible(view, &mut p);
                let mut st = c.prepare(&format!(
                    "SELECT {COMMENT_COLS} FROM comments WHERE comment_id IN ({placeholders}) AND {vis}"
                ))?;
                for row in st.query_map(params_from_iter(p.iter()), comment_from_row)? {
                    let row = row?;
                    found.insert(row.comment_id.clone(), row);
                }
            }
            Ok(ids.iter().filter_map(|id| found.remove(id)).collect())
        })
    }

    /// Filtered, paginated comment listing in (published_at, comment_id) order.
    pub fn query_comments(
        &self,
        view: View,
        filter: &CommentFilter,
        page: u32,
        page_size: u32,
    ) -> Result<Page<CommentRecord>> {
        check_page(page, page_size)?;
        self.with_conn(|c| {
            let mut p: Vec<Box<dyn ToSql>> = Vec::new();
            let mut conds = Vec::new();
            if let Some(v) = &filter.video_id {
                p.push(Box::new(v.clone()));
                conds.push(format!("video_id = ?{}", p.len()));
            }
            if let Some(a) = &filter.author_id {
                p.push(Box::new(a.clone()));
                conds.push(format!("author_id = ?{}", p.len()));
            }
            if let Some(t) = &filter.since {
                p.push(Box::new(ts(t)));
                conds.push(format!("published_at >= ?{}", p.len()));
            }
            if let Some(t) = &filter.until {
                p.push(Box::new(ts(t)));
                conds.push(format!("published_at < ?{}", p.len()));
            }
            if let Some(s) = &filter.text_substring {
                let escaped = s.replace('\\', "\\\\").replace('%', "\\%").replace('_', "\\_");
                p.push(Box::new(format!("%{escaped}%")));
                conds.push(format!("text LIKE ?{} ESCAPE '\\'", p.len()));
            }
            conds.push(visible(view, &mut p));
            let where_clause = conds.join(" AND ");

            let total: i64 = c.query_row(
                &format!("SELECT COUNT(*) FROM comments WHERE {where_clause}"),
                params_from_iter(p.iter()),
                |r| r.get(0),
            )?;
            p.push(Box::new(i64::from(page_size)));
            let limit_idx = p.len();
            p.push(Box::new(i64::from(page - 1) * i64::from(page_size)));
            let offset_idx = p.len();
            let mut st = c.prepare(&format!(
                "SELECT {COMMENT_COLS} FROM comments WHERE {where_clause}
                 ORDER BY published_at, comment_id LIMIT ?{limit_idx} OFFSET ?{offset_idx}"
            ))?;
            let items = st
                .query_map(params_from_iter(p.iter()), comment_from_row)?
                .collect::<rusqlite::Result<Vec<_>>>()?;
            Ok(Page { items, page, page_size, total: total as u64 })
        })
    }

    // ---- artifacts ----

    /// Store `blob` under `key`, replacing any earlier blob for the same key.
    /// Returns the blob's content hash.
    pub fn put_artifact(&self, key: &ArtifactKey, blob: &[u8]) -> Result<String> {
        key.validate()?;
        let hash = sha256_hex(blob);
        self.with_conn(|c| {
            let tx = c.transaction()?;
            tx.execute(
                "INSERT OR IGNORE INTO blobs (hash, body) VALUES (?1, ?2)",
                params![hash, blob],
            )?;
            tx.execute(
                "INSERT INTO artifacts (kind, scope_id, config_digest, blob_hash)
                 VALUES (?1, ?2, ?3, ?4)
                 ON CONFLICT(kind, scope_id, config_digest) DO UPDATE SET blob_hash = excluded.blob_hash",
                params![key.kind.as_str(), key.scope_id.as_id(), key.config_digest, hash],
            )?;
            tx.commit()?;
            Ok(hash.clone())
        })
    }

    pub fn get_artifact(&self, key: &ArtifactKey) -> Result<Option<Vec<u8>>> {
        key.validate()?;
        Ok(self.artifact_ref(key)?.map(|r| r.1))
    }

    /// Blob hash and bytes for `key`, if written.
    pub fn artifact_ref(&self, key: &ArtifactKey) -> Result<Option<(String, Vec<u8>)>> {
        self.with_conn(|c| {
            Ok(c.query_row(
                "SELECT b.hash, b.body FROM artifacts a JOIN blobs b ON b.hash = a.blob_hash
                 WHERE a.kind = ?1 AND a.scope_id = ?2 AND a.config_digest = ?3",
                params![key.kind.as_str(), key.scope_id.as_id(), key.config_digest],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?)
        })
    }

    pub fn blob(&self, hash: &str) -> Result<Option<Vec<u8>>> {
        self.with_conn(|c| {
            Ok(c.query_row("SELECT body FROM blobs WHERE hash = ?1", params![hash], |r| r.get(0))
                .optional()?)
        })
    }

    /// Blob for (kind, scope) as recorded in `snapshot`.
    pub fn snapshot_blob(
        &self,
        snapshot: &CorpusSnapshot,
        kind: ArtifactKind,
        scope: &Scope,
    ) -> Result<Option<Vec<u8>>> {
        match snapshot.artifact(kind, scope) {
            Some(r) => self.blob(&r.blob),
            None => Ok(None),
        }
    }

    // ---- llm response cache ----

    pub fn llm_cache_get(&self, digest: &str) -> Result<Option<String>> {
        self.with_conn(|c| {
            Ok(c.query_row(
                "SELECT response FROM llm_cache WHERE digest = ?1",
                params![digest],
                |r| r.get(0),
            )
            .optional()?)
        })
    }

    pub fn llm_cache_put(&self, digest: &str, response: &str) -> Result<()> {
        self.with_conn(|c| {
            c.execute(
                "INSERT INTO llm_cache (digest, response) VALUES (?1, ?2)
                 ON CONFLICT(digest) DO UPDATE SET response = excluded.response",
                params![digest, response],
            )?;
            Ok(())
        })
    }

    // ---- snapshots ----

    /// Atomically publish the working set plus `index` as the new current
    /// snapshot.
    pub fn publish_snapshot(
        &self,
        index: ArtifactIndex,
        degraded: BTreeMap<String, String>,
        now: DateTime<Utc>,
    ) -> Result<CorpusSnapshot> {
        let _guard = self.publish_lock()?;
        for r in index.values() {
            if self.blob(&r.blob)?.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "artifact {}/{} points at a missing blob",
                    r.kind, r.scope_id
                )));
            }
        }
        self.with_conn(|c| {
            let tx = c.transaction_with_behavior(rusqlite::TransactionBehavior::Immediate)?;
            let id = pending_version(&tx)?;
            let video_count: i64 =
                tx.query_row("SELECT COUNT(*) FROM videos WHERE valid_to IS NULL", [], |r| r.get(0))?;
            let comment_count: i64 = tx.query_row(
                "SELECT COUNT(*) FROM comments WHERE valid_to IS NULL",
                [],
                |r| r.get(0),
            )?;
            let snapshot = CorpusSnapshot {
                snapshot_id: id as u64,
                created_at: now,
                video_count: video_count as u64,
                comment_count: comment_count as u64,
                artifact_index: index,
                degraded,
            };
            tx.execute("UPDATE snapshots SET is_current = 0 WHERE is_current = 1", [])?;
            tx.execute(
                "INSERT INTO snapshots (snapshot_id, created_at, video_count, comment_count,
                    artifact_index, degraded, is_current)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, 1)",
                params![
                    id,
                    ts(&now),
                    video_count,
                    comment_count,
                    serde_json::to_string(&snapshot.artifact_index)?,
                    serde_json::to_string(&snapshot.degraded)?,
                ],
            )?;
            tx.commit()?;
            Ok(snapshot)
        })
    }

    fn snapshot_from_row(r: &Row<'_>) -> rusqlite::Result<(i64, String, i64, i64, String, String)> {
        Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?))
    }

    fn decode_snapshot(raw: (i64, String, i64, i64, String, String)) -> Result<CorpusSnapshot> {
        Ok(CorpusSnapshot {
            snapshot_id: raw.0 as u64,
            created_at: parse_ts(&raw.1)?,
            video_count: raw.2 as u64,
            comment_count: raw.3 as u64,
            artifact_index: serde_json::from_str(&raw.4)?,
            degraded: serde_json::from_str(&raw.5)?,
        })
    }

    pub fn current_snapshot(&self) -> Result<Option<CorpusSnapshot>> {
        let raw = self.with_conn(|c| {
            Ok(c.query_row(
                "SELECT snapshot_id, created_at, video_count, comment_count, artifact_index, degraded
                 FROM snapshots WHERE is_current = 1",
                [],
                Self::snapshot_from_row,
            )
            .optional()?)
        })?;
        raw.map(Self::decode_snapshot).transpose()
    }

    pub fn snapshot(&self, id: u64) -> Result<CorpusSnapshot> {
        let raw = self.with_conn(|c| {
            Ok(c.query_row(
                "SELECT snapshot_id, created_at, video_count, comment_count, artifact_index, degraded
                 FROM snapshots WHERE snapshot_id = ?1",
                params![id as i64],
                Self::snapshot_from_row,
            )
            .optional()?)
        })?;
        raw.map(Self::decode_snapshot).transpose()?.ok_or(Error::SnapshotNotFound(id))
    }

    pub fn snapshot_ids(&self) -> Result<Vec<u64>> {
        self.with_conn(|c| {
            let mut st = c.prepare("SELECT snapshot_id FROM snapshots ORDER BY snapshot_id")?;
            let rows = st.query_map([], |r| r.get::<_, i64>(0))?;
            Ok(rows.map(|r| r.map(|v| v as u64)).collect::<rusqlite::Result<Vec<_>>>()?)
        })
    }

    // ---- fetch manifests ----

    pub fn save_manifest(&self, m: &FetchManifest) -> Result<()> {
        let body = serde_json::to_string(m)?;
        self.with_conn(|c| {
            c.execute(
                "INSERT INTO manifests (channel_id, body) VALUES (?1, ?2)",
                params![m.channel_id, body],
            )?;
            Ok(())
        })
    }

    pub fn last_manifest(&self, channel_id: &str) -> Result<Option<FetchManifest>> {
        self.with_conn(|c| {
            let body: Option<String> = c
                .query_row(
                    "SELECT body FROM manifests WHERE channel_id = ?1 ORDER BY id DESC LIMIT 1",
                    params![channel_id],
                    |r| r.get(0),
                )
                .optional()?;
            Ok(body.map(|b| serde_json::from_str(&b)).transpose()?)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    fn t(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, day, 12, 0, 0).unwrap()
    }

    fn video(id: &str) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            title: format!("Video {id}"),
            published_at: t(1),
            view_count: 100,
            like_count: 10,
            comment_count_reported: 0,
            fetched_at: t(20),
        }
    }

    fn comment(id: usize, video: &str) -> CommentRecord {
        CommentRecord {
            comment_id: format!("c{id:04}"),
            video_id: video.into(),
            parent_id: None,
            author_id: format!("a{}", id % 3),
            author_display: format!("Author {}", id % 3),
            text: format!("comment number {id}"),
            published_at: t(2) + Duration::minutes(id as i64),
            like_count: 0,
        }
    }

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path().join("db.sqlite")).unwrap();
        (dir, s)
    }

    #[test]
    fn upserting_same_comments_twice_changes_nothing() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1")]).unwrap();
        let cs: Vec<_> = (0..10).map(|i| comment(i, "v1")).collect();
        assert_eq!(s.upsert_comments(&cs).unwrap(), 10);
        assert_eq!(s.upsert_comments(&cs).unwrap(), 0);
        assert_eq!(s.comment_count(View::Working).unwrap(), 10);
    }

    #[test]
    fn unknown_video_rejects_whole_batch() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1")]).unwrap();
        let mut cs: Vec<_> = (0..5).map(|i| comment(i, "v1")).collect();
        cs.push(comment(99, "missing"));
        match s.upsert_comments(&cs) {
            Err(Error::UnknownVideo { video_id, .. }) => assert_eq!(video_id, "missing"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.comment_count(View::Working).unwrap(), 0);
    }

    #[test]
    fn blank_comment_rejects_batch() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1")]).unwrap();
        let mut c = comment(1, "v1");
        c.text = "   ".into();
        assert!(s.upsert_comments(&[comment(0, "v1"), c]).is_err());
        assert_eq!(s.comment_count(View::Working).unwrap(), 0);
    }

    #[test]
    fn latest_write_wins() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1")]).unwrap();
        let mut c = comment(1, "v1");
        s.upsert_comments(&[c.clone()]).unwrap();
        c.text = "edited".into();
        assert_eq!(s.upsert_comments(&[c.clone()]).unwrap(), 1);
        let all = s.all_comments(View::Working).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].text, "edited");
    }

    #[test]
    fn artifact_put_get_and_overwrite() {
        let (_d, s) = store();
        let key = ArtifactKey::new(ArtifactKind::Stats, Scope::Channel, "d1");
        assert!(s.get_artifact(&key).unwrap().is_none());
        s.put_artifact(&key, b"{\"a\":1}").unwrap();
        assert_eq!(s.get_artifact(&key).unwrap().unwrap(), b"{\"a\":1}");
        let other = ArtifactKey::new(ArtifactKind::Stats, Scope::Channel, "d2");
        assert!(s.get_artifact(&other).unwrap().is_none());
        s.put_artifact(&key, b"{\"a\":2}").unwrap();
        assert_eq!(s.get_artifact(&key).unwrap().unwrap(), b"{\"a\":2}");
    }

    #[test]
    fn snapshots_are_isolated_from_later_writes() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1")]).unwrap();
        s.upsert_comments(&[comment(1, "v1")]).unwrap();
        let key = ArtifactKey::new(ArtifactKind::Stats, Scope::Channel, "d");
        let hash = s.put_artifact(&key, b"old").unwrap();
        let mut index = ArtifactIndex::new();
        index.insert(
            key.slot(),
            ArtifactRef { kind: key.kind, scope_id: Scope::Channel, config_digest: "d".into(), blob: hash },
        );
        let s1 = s.publish_snapshot(index, BTreeMap::new(), t(21)).unwrap();
        assert_eq!(s1.snapshot_id, 1);

        // Writes after publish: edit, add, overwrite artifact.
        let mut edited = comment(1, "v1");
        edited.text = "changed".into();
        s.upsert_comments(&[edited, comment(2, "v1")]).unwrap();
        s.put_artifact(&key, b"new").unwrap();

        let old = s.all_comments(View::Snapshot(1)).unwrap();
        assert_eq!(old.len(), 1);
        assert_eq!(old[0].text, "comment number 1");
        assert_eq!(s.snapshot_blob(&s1, ArtifactKind::Stats, &Scope::Channel).unwrap().unwrap(), b"old");
        assert_eq!(s.all_comments(View::Working).unwrap().len(), 2);

        let s2 = s.publish_snapshot(ArtifactIndex::new(), BTreeMap::new(), t(22)).unwrap();
        assert_eq!(s2.snapshot_id, 2);
        assert_eq!(s.current_snapshot().unwrap().unwrap().snapshot_id, 2);
        assert_eq!(s.all_comments(View::Snapshot(2)).unwrap()[0].text, "changed");
        // The reader still holding snapshot 1 sees the old state.
        assert_eq!(s.all_comments(View::Snapshot(1)).unwrap()[0].text, "comment number 1");
    }

    #[test]
    fn empty_publish_is_legal() {
        let (_d, s) = store();
        let snap = s.publish_snapshot(ArtifactIndex::new(), BTreeMap::new(), t(1)).unwrap();
        assert_eq!(snap.comment_count, 0);
        assert!(snap.artifact_index.is_empty());
    }

    #[test]
    fn concurrent_publish_is_refused() {
        let (_d, s) = store();
        let _held = s.publish_lock().unwrap();
        assert!(matches!(
            s.publish_snapshot(ArtifactIndex::new(), BTreeMap::new(), t(1)),
            Err(Error::PublishInProgress)
        ));
    }

    #[test]
    fn ingest_lock_is_exclusive() {
        let (_d, s) = store();
        let g = s.ingest_lock().unwrap();
        assert!(matches!(s.ingest_lock(), Err(Error::IngestLocked)));
        drop(g);
        s.ingest_lock().unwrap();
    }

    #[test]
    fn pagination_is_complete_and_stable() {
        let (_d, s) = store();
        s.upsert_videos(&[video("v1"), video("v2")]).unwrap();
        let cs: Vec<_> =
            (0..250).map(|i| comment(i, if i % 2 == 0 { "v1" } else { "v2" })).collect();
        s.upsert_comments(&cs).unwrap();
        let mut seen = Vec::new();
        for page in 1..=3 {
            let p = s.query_comments(View::Working, &CommentFilter::default(), page, 100).unwrap();
            assert_eq!(p.total, 250);
            seen.extend(p.items.into_iter().map(|c| c.comment_id));
        }
        let mut expected: Vec<_> = cs.iter().map(|c| c.comment_id.clone()).collect();
        expected.sort();
        assert_eq!(seen, expected);

        let f = CommentFilter { text_substring: Some("NUMBER 1".into()), ..Default::default() };
        let p = s.query_comments(View::Working, &f, 1, 500).unwrap();
        assert!(p.items.iter().all(|c| c.text.contains("number 1")));
        let f = CommentFilter { text_substring: Some("zzz".into()), ..Default::default() };
        assert_eq!(s.query_comments(View::Working, &f, 1, 10).unwrap().total, 0);
        let f = CommentFilter { text_substring: Some("%".into()), ..Default::default() };
        assert_eq!(s.query_comments(View::Working, &f, 1, 10).unwrap().total, 0);

        assert!(s.query_comments(View::Working, &CommentFilter::default(), 0, 10).is_err());
        assert!(s.query_comments(View::Working, &CommentFilter::default(), 1, 501).is_err());
        assert!(s.query_comments(View::Working, &CommentFilter::default(), 1, 0).is_err());
    }
}
