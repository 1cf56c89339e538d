//! YouTube Data API v3 client: channel uploads, video metadata, comment
//! threads and replies, with request pacing, retries and resumable
//! quota handling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::time::Instant;

use super::{drop_blank, is_new, persist, SourceError};
use crate::datastore::{Store, View};
use crate::error::{Error, Result};
use crate::model::{ChannelRef, CommentRecord, FetchManifest, VideoRecord};

#[derive(Debug, Clone)]
pub struct YouTubeOptions {
    pub api_base: String,
    pub api_key: String,
    pub requests_per_second: f64,
    pub max_retries: u32,
    pub max_concurrent_videos: usize,
    pub base_backoff: Duration,
}

impl YouTubeOptions {
    pub fn new(api_base: impl Into<String>, api_key: impl Into<String>) -> Self {
        YouTubeOptions {
            api_base: api_base.into(),
            api_key: api_key.into(),
            requests_per_second: 5.0,
            max_retries: 5,
            max_concurrent_videos: 4,
            base_backoff: Duration::from_millis(500),
        }
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: tokio::sync::Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket { rate, capacity, state: tokio::sync::Mutex::new((capacity, Instant::now())) }
    }

    async fn acquire(&self) {
        if !(self.rate > 0.0) || self.rate.is_infinite() {
            return;
        }
        let mut s = self.state.lock().await;
        loop {
            let now = Instant::now();
            s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.capacity);
            s.1 = now;
            if s.0 >= 1.0 {
                s.0 -= 1.0;
                return;
            }
            tokio::time::sleep(Duration::from_secs_f64((1.0 - s.0) / self.rate)).await;
        }
    }
}

enum Failure {
    Quota,
    CommentsDisabled,
    NotFound(String),
    Fatal(SourceError),
}

pub struct YouTubeClient {
    http: reqwest::Client,
    opts: YouTubeOptions,
    bucket: TokenBucket,
}

fn reason_of(body: &Value) -> String {
    body.pointer("/error/errors/0/reason").and_then(Value::as_str).unwrap_or_default().to_string()
}

fn message_of(body: &Value, fallback: &str) -> String {
    body.pointer("/error/message").and_then(Value::as_str).unwrap_or(fallback).to_string()
}

fn decode(what: &str) -> Failure {
    Failure::Fatal(SourceError::Decode(what.to_string()))
}

fn str_at<'a>(v: &'a Value, ptr: &str) -> std::result::Result<&'a str, Failure> {
    v.pointer(ptr).and_then(Value::as_str).ok_or_else(|| decode(&format!("missing {ptr}")))
}

fn count_at(v: &Value, ptr: &str) -> u64 {
    match v.pointer(ptr) {
        Some(Value::String(s)) => s.parse().unwrap_or(0),
        Some(Value::Number(n)) => n.as_u64().unwrap_or(0),
        _ => 0,
    }
}

fn time_at(v: &Value, ptr: &str) -> std::result::Result<DateTime<Utc>, Failure> {
    let s = str_at(v, ptr)?;
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc)).map_err(|e| decode(&format!("{ptr}: {e}")))
}

fn comment_from(item: &Value, video_id: &str) -> std::result::Result<CommentRecord, Failure> {
    let sn = item.get("snippet").ok_or_else(|| decode("comment without snippet"))?;
    let text = sn
        .get("textOriginal")
        .or_else(|| sn.get("textDisplay"))
        .and_then(Value::as_str)
        .unwrap_or_default();
    Ok(CommentRecord {
        comment_id: str_at(item, "/id")?.to_string(),
        video_id: video_id.to_string(),
        parent_id: sn.get("parentId").and_then(Value::as_str).map(str::to_string),
        author_id: sn
            .pointer("/authorChannelId/value")
            .and_then(Value::as_str)
            .or_else(|| sn.get("authorDisplayName").and_then(Value::as_str))
            .unwrap_or("unknown")
            .to_string(),
        author_display: sn.get("authorDisplayName").and_then(Value::as_str).unwrap_or_default().to_string(),
        text: text.to_string(),
        published_at: time_at(sn, "/publishedAt")?,
        like_count: count_at(sn, "/likeCount"),
    })
}

impl YouTubeClient {
    pub fn new(opts: YouTubeOptions) -> Self {
        YouTubeClient { http: reqwest::Client::new(), bucket: TokenBucket::new(opts.requests_per_second), opts }
    }

    async fn get(&self, endpoint: &str, query: &[(&str, String)]) -> std::result::Result<Value, Failure> {
        let url = format!("{}/{}", self.opts.api_base.trim_end_matches('/'), endpoint);
        let mut attempt = 0u32;
        loop {
            self.bucket.acquire().await;
            let sent = self.http.get(&url).query(query).query(&[("key", &self.opts.api_key)]).send().await;
            let retry_reason = match sent {
                Err(e) => e.to_string(),
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body: Value = resp.json().await.unwrap_or(Value::Null);
                    if status == 200 {
                        return Ok(body);
                    }
                    let reason = reason_of(&body);
                    match (status, reason.as_str()) {
                        (403, "quotaExceeded" | "dailyLimitExceeded") => return Err(Failure::Quota),
                        (403, "commentsDisabled") => return Err(Failure::CommentsDisabled),
                        (400, "keyInvalid") | (401, _) | (403, "keyInvalid" | "accessNotConfigured" | "forbidden") => {
                            return Err(Failure::Fatal(SourceError::CredentialInvalid(message_of(&body, &reason))))
                        }
                        (404, _) => return Err(Failure::NotFound(message_of(&body, "not found"))),
                        (429, _) | (403, "rateLimitExceeded" | "userRateLimitExceeded") | (500..=599, _) => {
                            format!("HTTP {status} {reason}")
                        }
                        _ => {
                            return Err(Failure::Fatal(SourceError::Http {
                                status,
                                message: message_of(&body, &reason),
                            }))
                        }
                    }
                }
            };
            if attempt >= self.opts.max_retries {
                return Err(Failure::Fatal(SourceError::Transport(retry_reason)));
            }
            let wait = self.opts.base_backoff * 2u32.saturating_pow(attempt);
            tracing::warn!(attempt, ?wait, reason = %retry_reason, "retrying YouTube request");
            tokio::time::sleep(wait).await;
            attempt += 1;
        }
    }
}

/// Progress saved when the quota runs out mid-fetch. Opaque to callers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeCursor {
    videos_page: Option<String>,
    videos_done: bool,
    completed: BTreeSet<String>,
    in_progress: BTreeMap<String, String>,
}

impl ResumeCursor {
    pub fn encode(&self) -> String {
        URL_SAFE_NO_PAD.encode(serde_json::to_vec(self).expect("cursor serializes"))
    }

    pub fn decode(s: &str) -> Result<Self> {
        let bytes = URL_SAFE_NO_PAD
            .decode(s.trim())
            .map_err(|e| Error::InvalidArgument(format!("resume cursor: {e}")))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidArgument(format!("resume cursor: {e}")))
    }
}

struct Run<'a> {
    client: &'a YouTubeClient,
    store: &'a Store,
    since: Option<DateTime<Utc>>,
    now: DateTime<Utc>,
    manifest: Mutex<FetchManifest>,
    cursor: Mutex<ResumeCursor>,
    quota_hit: AtomicBool,
}

impl Run<'_> {
    fn bump(&self, pages: u64, videos: u64, comments: u64) {
        let mut m = self.manifest.lock().expect("manifest lock");
        m.pages_consumed += pages;
        m.videos_fetched += videos;
        m.comments_fetched += comments;
    }

    async fn videos(&self) -> std::result::Result<(), Failure> {
        let uploads = self.uploads_playlist().await?;
        let mut token = self.cursor.lock().expect("cursor").videos_page.clone();
        loop {
            let mut q = vec![
                ("part", "contentDetails".to_string()),
                ("playlistId", uploads.clone()),
                ("maxResults", "50".to_string()),
            ];
            if let Some(t) = &token {
                q.push(("pageToken", t.clone()));
            }
            let page = self.client.get("playlistItems", &q).await?;
            let ids: Vec<String> = page
                .get("items")
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(|i| i.pointer("/contentDetails/videoId").and_then(Value::as_str))
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            let mut records = Vec::new();
            if !ids.is_empty() {
                let details = self
                    .client
                    .get("videos", &[("part", "snippet,statistics".to_string()), ("id", ids.join(","))])
                    .await?;
                for item in details.get("items").and_then(Value::as_array).into_iter().flatten() {
                    records.push(VideoRecord {
                        video_id: str_at(item, "/id")?.to_string(),
                        title: str_at(item, "/snippet/title")?.to_string(),
                        published_at: time_at(item, "/snippet/publishedAt")?,
                        view_count: count_at(item, "/statistics/viewCount"),
                        like_count: count_at(item, "/statistics/likeCount"),
                        comment_count_reported: count_at(item, "/statistics/commentCount"),
                        fetched_at: self.now,
                    });
                }
            }
            persist(self.store, &records, &[]).map_err(|e| Failure::Fatal(SourceError::Decode(e.to_string())))?;
            self.bump(if ids.is_empty() { 1 } else { 2 }, records.len() as u64, 0);
            token = page.get("nextPageToken").and_then(Value::as_str).map(str::to_string);
            let mut c = self.cursor.lock().expect("cursor");
            c.videos_page = token.clone();
            if token.is_none() {
                c.videos_done = true;
                return Ok(());
            }
        }
    }

    async fn uploads_playlist(&self) -> std::result::Result<String, Failure> {
        let channel_id = self.manifest.lock().expect("manifest").channel_id.clone();
        let body = self
            .client
            .get("channels", &[("part", "snippet,contentDetails".to_string()), ("id", channel_id.clone())])
            .await?;
        let item = body
            .get("items")
            .and_then(Value::as_array)
            .and_then(|a| a.first())
            .ok_or(Failure::Fatal(SourceError::ChannelNotFound(channel_id)))?;
        Ok(str_at(item, "/contentDetails/relatedPlaylists/uploads")?.to_string())
    }

    /// All replies of a thread beyond the ones inlined in the thread item.
    async fn replies(&self, thread_id: &str, video_id: &str) -> std::result::Result<Vec<CommentRecord>, Failure> {
        let mut out = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut q = vec![
                ("part", "snippet".to_string()),
                ("parentId", thread_id.to_string()),
                ("maxResults", "100".to_string()),
                ("textFormat", "plainText".to_string()),
            ];
            if let Some(t) = &token {
                q.push(("pageToken", t.clone()));
            }
            let page = self.client.get("comments", &q).await?;
            self.bump(1, 0, 0);
            for item in page.get("items").and_then(Value::as_array).into_iter().flatten() {
                let mut c = comment_from(item, video_id)?;
                c.parent_id.get_or_insert_with(|| thread_id.to_string());
                out.push(c);
            }
            token = page.get("nextPageToken").and_then(Value::as_str).map(str::to_string);
            if token.is_none() {
                return Ok(out);
            }
        }
    }

    async fn video_comments(&self, video_id: String) -> std::result::Result<(), Failure> {
        let mut token = self.cursor.lock().expect("cursor").in_progress.get(&video_id).cloned();
        loop {
            if self.quota_hit.load(Ordering::SeqCst) {
                return Err(Failure::Quota);
            }
            let mut q = vec![
                ("part", "snippet,replies".to_string()),
                ("videoId", video_id.clone()),
                ("maxResults", "100".to_string()),
                ("textFormat", "plainText".to_string()),
                ("order", "time".to_string()),
            ];
            if let Some(t) = &token {
                q.push(("pageToken", t.clone()));
            }
            let page = match self.client.get("commentThreads", &q).await {
                Ok(p) => p,
                Err(Failure::CommentsDisabled) | Err(Failure::NotFound(_)) => {
                    tracing::info!(video_id, "comments unavailable; recording none");
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut records = Vec::new();
            let mut any_new_top = false;
            for thread in page.get("items").and_then(Value::as_array).into_iter().flatten() {
                let top = thread
                    .pointer("/snippet/topLevelComment")
                    .ok_or_else(|| decode("thread without topLevelComment"))?;
                let top = comment_from(top, &video_id)?;
                let thread_id = top.comment_id.clone();
                any_new_top |= is_new(top.published_at, self.since);
                records.push(top);
                let inline: Vec<&Value> =
                    thread.pointer("/replies/comments").and_then(Value::as_array).into_iter().flatten().collect();
                let total = count_at(thread, "/snippet/totalReplyCount") as usize;
                if total > inline.len() {
                    records.extend(self.replies(&thread_id, &video_id).await?);
                } else {
                    for r in inline {
                        let mut c = comment_from(r, &video_id)?;
                        c.parent_id.get_or_insert_with(|| thread_id.clone());
                        records.push(c);
                    }
                }
            }
            let kept: Vec<CommentRecord> =
                drop_blank(records).into_iter().filter(|c| is_new(c.published_at, self.since)).collect();
            persist(self.store, &[], &kept).map_err(|e| Failure::Fatal(SourceError::Decode(e.to_string())))?;
            self.bump(1, 0, kept.len() as u64);
            token = page.get("nextPageToken").and_then(Value::as_str).map(str::to_string);
            // Threads come newest first; a page with nothing new ends an
            // incremental pass.
            let exhausted = token.is_none() || (self.since.is_some() && !any_new_top);
            let mut c = self.cursor.lock().expect("cursor");
            if exhausted {
                break;
            }
            c.in_progress.insert(video_id.clone(), token.clone().expect("token present"));
        }
        let mut c = self.cursor.lock().expect("cursor");
        c.in_progress.remove(&video_id);
        c.completed.insert(video_id);
        Ok(())
    }
}

/// Fetch (or, with `since`, incrementally sync) one channel into the
/// datastore. On quota exhaustion the manifest is saved with a resume
/// cursor and `SourceError::QuotaExhausted` is returned; pass the cursor
/// back through `resume` to continue.
pub async fn fetch_channel(
    store: &Store,
    client: &YouTubeClient,
    channel: &ChannelRef,
    incremental: bool,
    resume: Option<&str>,
    now: DateTime<Utc>,
) -> Result<FetchManifest> {
    let _lock = store.ingest_lock()?;
    let previous = store.channel()?;
    let since = if incremental { previous.as_ref().and_then(|p| p.last_fetch_at) } else { None };
    let cursor = resume.map(ResumeCursor::decode).transpose()?.unwrap_or_default();
    let run = Run {
        client,
        store,
        since,
        now,
        manifest: Mutex::new(FetchManifest::start(&channel.channel_id, now)),
        cursor: Mutex::new(cursor),
        quota_hit: AtomicBool::new(false),
    };

    let outcome = async {
        if !run.cursor.lock().expect("cursor").videos_done {
            run.videos().await?;
        }
        let done = run.cursor.lock().expect("cursor").completed.clone();
        let pending: Vec<String> = store
            .videos(View::Working)
            .map_err(|e| Failure::Fatal(SourceError::Decode(e.to_string())))?
            .into_iter()
            .map(|v| v.video_id)
            .filter(|id| !done.contains(id))
            .collect();
        let results: Vec<std::result::Result<(), Failure>> = stream::iter(pending)
            .map(|id| {
                let run = &run;
                async move {
                    let r = run.video_comments(id).await;
                    if matches!(r, Err(Failure::Quota)) {
                        run.quota_hit.store(true, Ordering::SeqCst);
                    }
                    r
                }
            })
            .buffer_unordered(client.opts.max_concurrent_videos.max(1))
            .collect()
            .await;
        let mut quota = false;
        for r in results {
            match r {
                Ok(()) => {}
                Err(Failure::Quota) => quota = true,
                Err(e) => return Err(e),
            }
        }
        if quota {
            Err(Failure::Quota)
        } else {
            Ok(())
        }
    }
    .await;

    let mut manifest = run.manifest.into_inner().expect("manifest");
    match outcome {
        Ok(()) => {
            manifest.finished_at = Some(now);
            store.save_manifest(&manifest)?;
            let mut ch = previous.unwrap_or_else(|| channel.clone());
            ch.channel_id = channel.channel_id.clone();
            if !channel.display_name.is_empty() {
                ch.display_name = channel.display_name.clone();
            }
            ch.last_fetch_at = Some(now);
            store.set_channel(&ch)?;
            Ok(manifest)
        }
        Err(Failure::Quota) => {
            let cursor = run.cursor.into_inner().expect("cursor").encode();
            manifest.resume_cursor = Some(cursor.clone());
            store.save_manifest(&manifest)?;
            Err(SourceError::QuotaExhausted { resume_cursor: cursor }.into())
        }
        Err(Failure::Fatal(e)) => Err(e.into()),
        Err(Failure::NotFound(m)) => Err(SourceError::ChannelNotFound(m).into()),
        Err(Failure::CommentsDisabled) => Err(SourceError::Decode("unexpected commentsDisabled".into()).into()),
    }
}
