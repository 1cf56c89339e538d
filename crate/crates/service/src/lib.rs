//! Read-only JSON API over published snapshots.
//!
//! Every successful response is `{"snapshot_id": N, "data": ...}`. A request
//! resolves its snapshot once, so all data in one response comes from the
//! same snapshot. `?snapshot=N` pins an older one.

mod error;
pub mod schemas;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use commentscope_core::analytics::{comment_time_histogram, sort_videos, Bucket, Direction, SortKey, TermEntry};
use commentscope_core::datastore::{ArtifactKind, CommentFilter, CorpusSnapshot, Page, Store, View, MAX_PAGE_SIZE};
use commentscope_core::model::Scope;
use commentscope_core::topics::TopicModel;
use commentscope_core::{CommentRecord, Error, VideoRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

pub use error::ApiError;

pub const TOPIC_COMMENTS_PAGE_SIZE: u32 = 50;
pub const DEFAULT_PAGE_SIZE: u32 = 50;

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub snapshot_id: u64,
    pub data: T,
}

type ApiResult<T> = Result<Json<Envelope<T>>, ApiError>;

#[derive(Clone)]
pub struct AppState {
    store: Store,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Allowed browser origins. `*` allows any.
    pub cors_origins: Vec<String>,
    /// Directory of a built dashboard to serve at `/`.
    pub static_dir: Option<PathBuf>,
}

pub fn router(store: Store, opts: &ServiceOptions) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/snapshot", get(snapshot_info))
        .route("/api/channel", get(channel_stats))
        .route("/api/channel/themes", get(channel_themes))
        .route("/api/channel/suggestions", get(channel_suggestions))
        .route("/api/channel/topics", get(channel_topics))
        .route("/api/channel/topics/{cluster_id}/comments", get(topic_comments))
        .route("/api/channel/alerts", get(channel_alerts))
        .route("/api/channel/superfans", get(channel_superfans))
        .route("/api/videos", get(list_videos))
        .route("/api/videos/{id}/stats", get(video_stats))
        .route("/api/videos/{id}/themes", get(video_themes))
        .route("/api/videos/{id}/suggestions", get(video_suggestions))
        .route("/api/videos/{id}/timeseries", get(video_timeseries))
        .route("/api/videos/{id}/wordcloud", get(video_wordcloud))
        .route("/api/videos/{id}/comments", get(video_comments))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(AppState { store });

    let mut app = match &opts.static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).not_found_service(ServeFile::new(index)))
        }
        None => api,
    };
    if !opts.cors_origins.is_empty() {
        let origin = if opts.cors_origins.iter().any(|o| o == "*") {
            AllowOrigin::any()
        } else {
            AllowOrigin::list(opts.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
        };
        app = app.layer(CorsLayer::new().allow_origin(origin).allow_methods([Method::GET]));
    }
    app
}

/// Serve `router` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Deserialize)]
struct SnapshotParam {
    snapshot: Option<u64>,
}

/// Run blocking datastore work against the requested snapshot.
async fn with_snapshot<T, F>(state: &AppState, pin: Option<u64>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Store, &CorpusSnapshot) -> Result<T, ApiError> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || {
        let snap = match pin {
            Some(id) => store.snapshot(id)?,
            None => store.current_snapshot()?.ok_or(Error::NoSnapshot)?,
        };
        let data = f(&store, &snap)?;
        Ok(Json(Envelope { snapshot_id: snap.snapshot_id, data }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn artifact<T: DeserializeOwned>(store: &Store, snap: &CorpusSnapshot, kind: ArtifactKind, scope: &Scope) -> Result<T, ApiError> {
    let blob = store
        .snapshot_blob(snap, kind, scope)?
        .ok_or_else(|| ApiError::not_computed(&format!("{kind} for {scope}")))?;
    serde_json::from_slice(&blob).map_err(|e| Error::from(e).into())
}

fn require_video(store: &Store, snap: &CorpusSnapshot, id: &str) -> Result<VideoRecord, ApiError> {
    store
        .video(View::Snapshot(snap.snapshot_id), id)?
        .ok_or_else(|| Error::VideoNotFound(id.to_string()).into())
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize)]
struct SnapshotSummary {
    snapshot_id: u64,
    created_at: DateTime<Utc>,
    video_count: u64,
    comment_count: u64,
    artifacts: Vec<String>,
    degraded: std::collections::BTreeMap<String, String>,
}

async fn snapshot_info(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<SnapshotSummary> {
    with_snapshot(&s, q.snapshot, |_, snap| {
        Ok(SnapshotSummary {
            snapshot_id: snap.snapshot_id,
            created_at: snap.created_at,
            video_count: snap.video_count,
            comment_count: snap.comment_count,
            artifacts: snap.artifact_index.keys().cloned().collect(),
            degraded: snap.degraded.clone(),
        })
    })
    .await
}

async fn channel_artifact(s: AppState, pin: Option<u64>, kind: ArtifactKind) -> ApiResult<Value> {
    with_snapshot(&s, pin, move |store, snap| artifact(store, snap, kind, &Scope::Channel)).await
}

async fn channel_stats(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    channel_artifact(s, q.snapshot, ArtifactKind::Stats).await
}

async fn channel_themes(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    channel_artifact(s, q.snapshot, ArtifactKind::ThemesChannel).await
}

async fn channel_suggestions(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    channel_artifact(s, q.snapshot, ArtifactKind::SuggestionsChannel).await
}

async fn channel_alerts(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    channel_artifact(s, q.snapshot, ArtifactKind::Alerts).await
}

async fn channel_superfans(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    channel_artifact(s, q.snapshot, ArtifactKind::Superfans).await
}

/// Topic table without the per-comment assignments.
#[derive(Debug, Serialize)]
struct TopicTable {
    scope: Scope,
    total_comments: usize,
    clusters: Vec<commentscope_core::topics::TopicCluster>,
    embedding_model_id: String,
    label_model_id: String,
    reduction_skipped: bool,
}

async fn channel_topics(State(s): State<AppState>, Query(q): Query<SnapshotParam>) -> ApiResult<TopicTable> {
    with_snapshot(&s, q.snapshot, |store, snap| {
        let m: TopicModel = artifact(store, snap, ArtifactKind::Topics, &Scope::Channel)?;
        Ok(TopicTable {
            scope: m.scope,
            total_comments: m.total_comments,
            clusters: m.table,
            embedding_model_id: m.embedding_model_id,
            label_model_id: m.label_model_id,
            reduction_skipped: m.reduction_skipped,
        })
    })
    .await
}

#[derive(Debug, Deserialize)]
struct PageParams {
    page: Option<u32>,
    page_size: Option<u32>,
}

impl PageParams {
    fn resolve(&self, default_size: u32) -> Result<(u32, u32), ApiError> {
        let page = self.page.unwrap_or(1);
        let size = self.page_size.unwrap_or(default_size);
        commentscope_core::datastore::check_page(page, size)?;
        Ok((page, size))
    }
}

#[derive(Debug, Serialize)]
struct MemberComment {
    #[serde(flatten)]
    comment: CommentRecord,
    membership_strength: f64,
}

async fn topic_comments(
    State(s): State<AppState>,
    Path(cluster_id): Path<i32>,
    Query(q): Query<SnapshotParam>,
    Query(p): Query<PageParams>,
) -> ApiResult<Page<MemberComment>> {
    let (page, size) = p.resolve(TOPIC_COMMENTS_PAGE_SIZE)?;
    with_snapshot(&s, q.snapshot, move |store, snap| {
        let m: TopicModel = artifact(store, snap, ArtifactKind::Topics, &Scope::Channel)?;
        if !m.table.iter().any(|t| t.cluster_id == cluster_id) {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "cluster_not_found", format!("no cluster {cluster_id}")));
        }
        let members: Vec<_> = m.assignments.iter().filter(|a| a.cluster_id == cluster_id).collect();
        let start = ((page - 1) as usize).saturating_mul(size as usize).min(members.len());
        let end = (start + size as usize).min(members.len());
        let slice = &members[start..end];
        let ids: Vec<String> = slice.iter().map(|a| a.comment_id.clone()).collect();
        let mut found: HashMap<String, CommentRecord> = store
            .comments_by_ids(View::Snapshot(snap.snapshot_id), &ids)?
            .into_iter()
            .map(|c| (c.comment_id.clone(), c))
            .collect();
        let items = slice
            .iter()
            .filter_map(|a| {
                found.remove(&a.comment_id).map(|comment| MemberComment { comment, membership_strength: a.membership_strength })
            })
            .collect();
        Ok(Page { items, page, page_size: size, total: members.len() as u64 })
    })
    .await
}

#[derive(Debug, Deserialize)]
struct SortParams {
    sort: Option<String>,
    direction: Option<String>,
}

#[derive(Debug, Serialize)]
struct VideoListing {
    #[serde(flatten)]
    video: VideoRecord,
    comment_count: u64,
}

async fn list_videos(
    State(s): State<AppState>,
    Query(q): Query<SnapshotParam>,
    Query(p): Query<SortParams>,
) -> ApiResult<Vec<VideoListing>> {
    let key: SortKey = p.sort.as_deref().unwrap_or("chronological").parse()?;
    let direction: Direction = p.direction.as_deref().unwrap_or("asc").parse()?;
    with_snapshot(&s, q.snapshot, move |store, snap| {
        let view = View::Snapshot(snap.snapshot_id);
        let videos = store.videos(view)?;
        let mut counts = HashMap::new();
        for v in &videos {
            let filter = CommentFilter { video_id: Some(v.video_id.clone()), ..Default::default() };
            counts.insert(v.video_id.clone(), store.query_comments(view, &filter, 1, 1)?.total);
        }
        Ok(sort_videos(&videos, &counts, key, direction)
            .into_iter()
            .map(|v| {
                let comment_count = counts[&v.video_id];
                VideoListing { video: v, comment_count }
            })
            .collect())
    })
    .await
}

async fn video_artifact(s: AppState, pin: Option<u64>, id: String, kind: ArtifactKind) -> ApiResult<Value> {
    with_snapshot(&s, pin, move |store, snap| {
        require_video(store, snap, &id)?;
        artifact(store, snap, kind, &Scope::Video(id))
    })
    .await
}

async fn video_stats(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    video_artifact(s, q.snapshot, id, ArtifactKind::Stats).await
}

async fn video_themes(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<SnapshotParam>) -> ApiResult<Value> {
    video_artifact(s, q.snapshot, id, ArtifactKind::ThemesVideo).await
}

async fn video_suggestions(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SnapshotParam>,
) -> ApiResult<Value> {
    video_artifact(s, q.snapshot, id, ArtifactKind::SuggestionsVideo).await
}

#[derive(Debug, Deserialize)]
struct BucketParam {
    bucket: Option<String>,
}

async fn video_timeseries(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SnapshotParam>,
    Query(b): Query<BucketParam>,
) -> ApiResult<Value> {
    let bucket: Bucket = b.bucket.as_deref().unwrap_or("week").parse()?;
    with_snapshot(&s, q.snapshot, move |store, snap| {
        require_video(store, snap, &id)?;
        let comments = store.comments_for_video(View::Snapshot(snap.snapshot_id), &id)?;
        let buckets = comment_time_histogram(&comments, bucket);
        Ok(serde_json::json!({ "video_id": id, "bucket": bucket, "buckets": buckets }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TopK {
    k: Option<usize>,
}

async fn video_wordcloud(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SnapshotParam>,
    Query(k): Query<TopK>,
) -> ApiResult<Vec<TermEntry>> {
    if k.k == Some(0) {
        return Err(ApiError::bad_request("k must be positive"));
    }
    with_snapshot(&s, q.snapshot, move |store, snap| {
        require_video(store, snap, &id)?;
        let mut terms: Vec<TermEntry> = artifact(store, snap, ArtifactKind::Wordcloud, &Scope::Video(id))?;
        if let Some(k) = k.k {
            terms.truncate(k);
        }
        Ok(terms)
    })
    .await
}

async fn video_comments(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SnapshotParam>,
    Query(p): Query<PageParams>,
) -> ApiResult<Page<CommentRecord>> {
    let (page, size) = p.resolve(DEFAULT_PAGE_SIZE.min(MAX_PAGE_SIZE))?;
    with_snapshot(&s, q.snapshot, move |store, snap| {
        require_video(store, snap, &id)?;
        let filter = CommentFilter { video_id: Some(id), ..Default::default() };
        Ok(store.query_comments(View::Snapshot(snap.snapshot_id), &filter, page, size)?)
    })
    .await
}
