use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use commentscope_client::{write_bundle, Client};
use commentscope_core::config::Config;
use commentscope_core::datastore::Store;
use commentscope_core::pipeline::{ingest, parse_stages, run_pipeline, IngestSource, Models, Prompts, RunSpec};
use commentscope_service::{router, serve, ServiceOptions};
use serde_json::Value;

async fn start(runs: &[&str]) -> (Client, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("db.sqlite")).unwrap();
    let demo = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    let cfg = Config::load(&demo.join("commentscope.toml")).unwrap();
    let now = Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap();
    ingest(&store, &cfg, &IngestSource::from_config(&cfg).unwrap(), true, now).await.unwrap();
    for stages in runs {
        let run = RunSpec { stages: parse_stages(stages).unwrap(), seed: cfg.seed };
        run_pipeline(&store, &cfg, &Models::stubs(), &Prompts::default(), &run, now).await.unwrap();
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, router(store, &ServiceOptions::default())));
    (Client::new(format!("http://{addr}")), dir)
}

fn read(root: &std::path::Path, rel: &str) -> Value {
    serde_json::from_slice(&std::fs::read(root.join(rel)).unwrap()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn full_bundle_mirrors_the_api() {
    let (client, _db) = start(&["sentiment,stats,topics,themes,alerts"]).await;
    let out = tempfile::tempdir().unwrap();
    let summary = write_bundle(&client, out.path()).await.unwrap();
    assert_eq!(summary.snapshot_id, 1);
    assert!(summary.not_computed.is_empty(), "{:?}", summary.not_computed);
    for f in &summary.files {
        assert!(out.path().join(f).is_file(), "{}", f.display());
    }

    let topics = read(out.path(), "channel/topics.json");
    assert_eq!(topics, serde_json::to_value(client.topics().await.unwrap()).unwrap());
    for c in topics["data"]["clusters"].as_array().unwrap() {
        let cid = c["cluster_id"].as_i64().unwrap();
        let page = read(out.path(), &format!("channel/topics/{cid}/comments/1.json"));
        assert_eq!(page["snapshot_id"], 1);
        assert_eq!(page["data"]["total"], c["member_count"]);
    }

    let videos = read(out.path(), "videos.json");
    let mut total = 0;
    for v in videos["data"].as_array().unwrap() {
        let id = v["video_id"].as_str().unwrap();
        for name in ["stats", "themes", "suggestions", "wordcloud", "timeseries-day", "timeseries-week", "timeseries-month"] {
            assert_eq!(read(out.path(), &format!("videos/{id}/{name}.json"))["snapshot_id"], 1, "{id}/{name}");
        }
        let page = read(out.path(), &format!("videos/{id}/comments/1.json"));
        total += page["data"]["total"].as_u64().unwrap();
        assert_eq!(page["data"]["total"], v["comment_count"]);
    }
    assert_eq!(total, 1500);

    let manifest = read(out.path(), "manifest.json");
    assert_eq!(manifest["snapshot_id"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn partial_snapshot_records_not_computed() {
    let (client, _db) = start(&["sentiment"]).await;
    let out = tempfile::tempdir().unwrap();
    let summary = write_bundle(&client, out.path()).await.unwrap();
    assert!(summary.not_computed.iter().any(|p| p == "channel/topics.json"), "{:?}", summary.not_computed);
    assert!(!out.path().join("channel/topics.json").exists());
    assert!(out.path().join("videos.json").is_file());
    let manifest = read(out.path(), "manifest.json");
    assert!(manifest["not_computed"].as_array().unwrap().iter().any(|p| p == "channel/topics.json"));
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_api_codes() {
    let (client, _db) = start(&["sentiment"]).await;
    let e = client.video_stats("missing").await.unwrap_err();
    assert_eq!(e.code(), "video_not_found");
    let e = client.topics().await.unwrap_err();
    assert!(e.is_not_computed());
    let e = client.pinned(42).videos(None, None).await.unwrap_err();
    assert_eq!(e.code(), "snapshot_not_found");
    assert_eq!(client.pinned(1).videos(None, None).await.unwrap().snapshot_id, 1);
}

#[tokio::test]
async fn unreachable_service() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let e = Client::new(format!("http://{addr}")).health().await.unwrap_err();
    assert_eq!(e.code(), "service_unreachable");
}
