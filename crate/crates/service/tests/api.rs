use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use commentscope_core::config::Config;
use commentscope_core::datastore::{Store, View};
use commentscope_core::pipeline::{ingest, parse_stages, run_pipeline, IngestSource, Models, Prompts, RunSpec};
use commentscope_service::{router, schemas, ServiceOptions};
use serde_json::Value;
use tower::ServiceExt;

struct Fixture {
    store: Store,
    _dir: tempfile::TempDir,
}

fn build(stage_runs: &[&str]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("db.sqlite")).unwrap();
    let demo = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    let cfg = Config::load(&demo.join("commentscope.toml")).unwrap();
    let now = Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        ingest(&store, &cfg, &IngestSource::from_config(&cfg).unwrap(), true, now).await.unwrap();
        for stages in stage_runs {
            let run = RunSpec { stages: parse_stages(stages).unwrap(), seed: cfg.seed };
            run_pipeline(&store, &cfg, &Models::stubs(), &Prompts::default(), &run, now).await.unwrap();
        }
    });
    Fixture { store, _dir: dir }
}

/// Snapshot 1: full analysis. Snapshot 2: sentiment only.
fn full() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| std::thread::spawn(|| build(&["sentiment,stats,topics,themes,alerts", "sentiment"])).join().unwrap())
}

fn app(store: &Store) -> Router {
    router(store.clone(), &ServiceOptions::default())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let res = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn validator(name: &str) -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(schemas::get(name).unwrap()).unwrap();
    jsonschema::options().should_validate_formats(true).build(&schema).unwrap()
}

fn check(name: &str, uri: &str, body: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{uri} vs {name}: {errors:?}");
}

async fn ok(app: &Router, uri: &str) -> Value {
    let (status, body) = get(app, uri).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {body}");
    body
}

async fn err(app: &Router, uri: &str, status: StatusCode, code: &str) {
    let (s, body) = get(app, uri).await;
    assert_eq!(s, status, "{uri}: {body}");
    assert_eq!(body["code"], code, "{uri}: {body}");
    check("error", uri, &body);
}

const PINNED: &str = "?snapshot=1";

fn with_pin(uri: &str) -> String {
    if uri.contains('?') {
        format!("{uri}&snapshot=1")
    } else {
        format!("{uri}{PINNED}")
    }
}

#[tokio::test]
async fn every_endpoint_matches_its_schema() {
    let f = full();
    let app = app(&f.store);
    let videos: Vec<String> =
        f.store.videos(View::Snapshot(1)).unwrap().into_iter().map(|v| v.video_id).collect();
    let topics = ok(&app, &with_pin("/api/channel/topics")).await;
    let clusters: Vec<i64> =
        topics["data"]["clusters"].as_array().unwrap().iter().map(|c| c["cluster_id"].as_i64().unwrap()).collect();
    assert!(clusters.contains(&-1));

    let mut covered = HashSet::new();
    for (pattern, schema) in schemas::ENDPOINTS {
        let mut uris = Vec::new();
        if pattern.contains("{id}") {
            for v in &videos {
                uris.push(pattern.replace("{id}", v));
            }
        } else if pattern.contains("{cluster_id}") {
            for c in &clusters {
                uris.push(pattern.replace("{cluster_id}", &c.to_string()));
            }
        } else {
            uris.push(pattern.to_string());
        }
        if pattern.ends_with("/timeseries") {
            uris = uris.iter().flat_map(|u| ["day", "week", "month"].map(|b| format!("{u}?bucket={b}"))).collect();
        }
        if *pattern == "/api/videos" {
            for key in ["chronological", "alphabetical", "views", "likes", "comments"] {
                uris.push(format!("/api/videos?sort={key}&direction=desc"));
            }
        }
        for uri in uris {
            let uri = if *pattern == "/api/health" { uri } else { with_pin(&uri) };
            let body = ok(&app, &uri).await;
            check(schema, &uri, &body);
            if *pattern != "/api/health" {
                assert_eq!(body["snapshot_id"], 1, "{uri}");
            }
            covered.insert(*pattern);
        }
    }
    assert_eq!(covered.len(), schemas::ENDPOINTS.len());
}

#[tokio::test]
async fn video_comment_pages_cover_every_comment_once() {
    let f = full();
    let app = app(&f.store);
    for v in f.store.videos(View::Snapshot(1)).unwrap() {
        let want: HashSet<String> = f
            .store
            .comments_for_video(View::Snapshot(1), &v.video_id)
            .unwrap()
            .into_iter()
            .map(|c| c.comment_id)
            .collect();
        for size in [1usize, 7, 50, 500] {
            if size == 1 && want.len() > 600 {
                continue;
            }
            let mut seen = Vec::new();
            let mut page = 1;
            loop {
                let body = ok(&app, &format!("/api/videos/{}/comments?page={page}&page_size={size}&snapshot=1", v.video_id)).await;
                let items = body["data"]["items"].as_array().unwrap();
                assert_eq!(body["data"]["total"].as_u64().unwrap() as usize, want.len());
                if items.is_empty() {
                    break;
                }
                assert!(items.len() <= size);
                seen.extend(items.iter().map(|c| c["comment_id"].as_str().unwrap().to_string()));
                page += 1;
            }
            let unique: HashSet<String> = seen.iter().cloned().collect();
            assert_eq!(unique.len(), seen.len(), "duplicates at page_size {size}");
            assert_eq!(unique, want, "page_size {size}");
        }
    }
}

#[tokio::test]
async fn topic_member_pages_partition_the_corpus() {
    let f = full();
    let app = app(&f.store);
    let topics = ok(&app, "/api/channel/topics?snapshot=1").await;
    let total = topics["data"]["total_comments"].as_u64().unwrap() as usize;
    let mut all = Vec::new();
    for c in topics["data"]["clusters"].as_array().unwrap() {
        let cid = c["cluster_id"].as_i64().unwrap();
        let members = c["member_count"].as_u64().unwrap() as usize;
        let mut got = Vec::new();
        let mut page = 1;
        loop {
            let body = ok(&app, &format!("/api/channel/topics/{cid}/comments?page={page}&page_size=13&snapshot=1")).await;
            assert_eq!(body["data"]["total"].as_u64().unwrap() as usize, members);
            let items = body["data"]["items"].as_array().unwrap();
            if items.is_empty() {
                break;
            }
            got.extend(items.iter().map(|m| m["comment_id"].as_str().unwrap().to_string()));
            page += 1;
        }
        assert_eq!(got.len(), members);
        all.extend(got);
    }
    let unique: HashSet<&String> = all.iter().collect();
    assert_eq!(unique.len(), all.len());
    assert_eq!(all.len(), total);
    assert_eq!(total as u64, f.store.comment_count(View::Snapshot(1)).unwrap());
}

#[tokio::test]
async fn sentiment_only_snapshot_reports_not_computed() {
    let f = full();
    let app = app(&f.store);
    let snap = ok(&app, "/api/snapshot").await;
    assert_eq!(snap["snapshot_id"], 2);
    for uri in [
        "/api/channel/topics",
        "/api/channel/topics/0/comments",
        "/api/channel/themes",
        "/api/channel/suggestions",
        "/api/channel/alerts",
        "/api/channel/superfans",
        "/api/channel",
        "/api/videos/vid-ferry/stats",
        "/api/videos/vid-ferry/themes",
        "/api/videos/vid-ferry/wordcloud",
    ] {
        err(&app, uri, StatusCode::CONFLICT, "not_computed").await;
    }
    // Raw data stays available.
    check("videos", "/api/videos", &ok(&app, "/api/videos").await);
    check("comments", "comments", &ok(&app, "/api/videos/vid-ferry/comments").await);
    check("timeseries", "timeseries", &ok(&app, "/api/videos/vid-ferry/timeseries").await);
}

#[tokio::test]
async fn pinning_reads_the_older_snapshot() {
    let f = full();
    let app = app(&f.store);
    let body = ok(&app, "/api/channel/topics?snapshot=1").await;
    assert_eq!(body["snapshot_id"], 1);
    let cur = ok(&app, "/api/videos").await;
    assert_eq!(cur["snapshot_id"], 2);
    err(&app, "/api/channel?snapshot=99", StatusCode::NOT_FOUND, "snapshot_not_found").await;
}

#[tokio::test]
async fn error_codes() {
    let f = full();
    let app = app(&f.store);
    err(&app, "/api/videos/nope/stats", StatusCode::NOT_FOUND, "video_not_found").await;
    err(&app, "/api/videos/nope/comments", StatusCode::NOT_FOUND, "video_not_found").await;
    err(&app, "/api/videos/nope/timeseries", StatusCode::NOT_FOUND, "video_not_found").await;
    err(&app, "/api/videos/vid-ferry/comments?page=0", StatusCode::BAD_REQUEST, "invalid_page").await;
    err(&app, "/api/videos/vid-ferry/comments?page_size=501", StatusCode::BAD_REQUEST, "invalid_page").await;
    err(&app, "/api/videos/vid-ferry/timeseries?bucket=year", StatusCode::BAD_REQUEST, "invalid_argument").await;
    err(&app, "/api/videos?sort=vibes", StatusCode::BAD_REQUEST, "invalid_argument").await;
    err(&app, "/api/videos/vid-ferry/wordcloud?k=0&snapshot=1", StatusCode::BAD_REQUEST, "invalid_argument").await;
    err(&app, "/api/channel/topics/999/comments?snapshot=1", StatusCode::NOT_FOUND, "cluster_not_found").await;
    err(&app, "/api/nothing", StatusCode::NOT_FOUND, "not_found").await;
}

#[tokio::test]
async fn wordcloud_k_truncates() {
    let f = full();
    let app = app(&f.store);
    let all = ok(&app, "/api/videos/vid-ferry/wordcloud?snapshot=1").await;
    let top = ok(&app, "/api/videos/vid-ferry/wordcloud?k=5&snapshot=1").await;
    let top = top["data"].as_array().unwrap();
    assert_eq!(top.len(), 5);
    assert_eq!(top[..], all["data"].as_array().unwrap()[..5]);
}

#[tokio::test]
async fn empty_store_has_no_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("db.sqlite")).unwrap();
    let app = app(&store);
    check("health", "/api/health", &ok(&app, "/api/health").await);
    err(&app, "/api/snapshot", StatusCode::CONFLICT, "no_snapshot").await;
    err(&app, "/api/videos", StatusCode::CONFLICT, "no_snapshot").await;
}

#[tokio::test]
async fn cors_allows_configured_origin() {
    let f = full();
    let opts = ServiceOptions { cors_origins: vec!["http://localhost:5173".into()], static_dir: None };
    let app = router(f.store.clone(), &opts);
    let req = Request::get("/api/health").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.headers()["access-control-allow-origin"], "http://localhost:5173");
}
