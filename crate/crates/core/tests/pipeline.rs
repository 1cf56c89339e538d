use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use commentscope_core::alerts::{Alert, AlertKind};
use commentscope_core::config::Config;
use commentscope_core::datastore::{ArtifactKind, Store, View};
use commentscope_core::llm::StubLlm;
use commentscope_core::model::Scope;
use commentscope_core::pipeline::*;
use commentscope_core::themes::{MatchStatus, ThemeReport};
use commentscope_core::topics::TopicModel;
use commentscope_core::Error;

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn demo_config() -> Config {
    Config::load(&demo_dir().join("commentscope.toml")).unwrap()
}

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
}

async fn ingested(dir: &tempfile::TempDir) -> (Store, Config) {
    let store = Store::open(dir.path().join("db.sqlite")).unwrap();
    let cfg = demo_config();
    let m = ingest(&store, &cfg, &IngestSource::from_config(&cfg).unwrap(), true, now()).await.unwrap();
    assert_eq!((m.videos_fetched, m.comments_fetched), (3, 1500));
    (store, cfg)
}

async fn analyze(store: &Store, cfg: &Config, models: &Models, stages: &str) -> commentscope_core::Result<RunOutcome> {
    let run = RunSpec { stages: parse_stages(stages).unwrap(), seed: cfg.seed };
    run_pipeline(store, cfg, models, &Prompts::default(), &run, now()).await
}

fn blobs(store: &Store, out: &RunOutcome) -> BTreeMap<String, Vec<u8>> {
    out.snapshot
        .artifact_index
        .iter()
        .map(|(slot, r)| (slot.clone(), store.blob(&r.blob).unwrap().unwrap()))
        .collect()
}

fn artifact<T: serde::de::DeserializeOwned>(store: &Store, out: &RunOutcome, kind: ArtifactKind, scope: &Scope) -> T {
    let r = out.snapshot.artifact(kind, scope).unwrap_or_else(|| panic!("missing {kind:?} {scope:?}"));
    serde_json::from_slice(&store.blob(&r.blob).unwrap().unwrap()).unwrap()
}

const ALL: &str = "sentiment,stats,topics,themes,alerts";

#[tokio::test]
async fn demo_run_produces_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let t = std::time::Instant::now();
    let out = analyze(&store, &cfg, &Models::stubs(), ALL).await.unwrap();
    assert!(t.elapsed().as_secs() < 60);
    let kinds: BTreeSet<_> = out.snapshot.kinds();
    assert_eq!(kinds, ArtifactKind::ALL.into_iter().collect());
    assert!(out.snapshot.degraded.is_empty(), "{:?}", out.snapshot.degraded);
    assert_eq!(out.snapshot.comment_count, 1500);
    assert!(out.reused.is_empty());

    let alerts: Vec<Alert> = artifact(&store, &out, ArtifactKind::Alerts, &Scope::Channel);
    let update: Vec<_> = alerts.iter().filter(|a| a.kind == AlertKind::UpdateRequests).collect();
    assert_eq!(update.len(), 1);
    assert_eq!(update[0].video_id, "vid-nightshift");
    assert_eq!(update[0].supporting_comment_ids.len(), 6);
    assert_eq!(update[0].baseline, 0.0);
    assert!(alerts.iter().any(|a| a.kind == AlertKind::VolumeHigh && a.video_id == "vid-salt"));

    let topics: TopicModel = artifact(&store, &out, ArtifactKind::Topics, &Scope::Channel);
    let share: f64 = topics.table.iter().map(|r| r.share_pct).sum();
    assert!((share - 100.0).abs() < 1e-6);
    assert_eq!(topics.assignments.len(), 1500);
}

#[tokio::test]
async fn citations_stay_inside_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let out = analyze(&store, &cfg, &Models::stubs(), "sentiment,themes").await.unwrap();
    let snap = View::Snapshot(out.snapshot.snapshot_id);
    let mut checked = 0;
    for r in out.snapshot.artifact_index.values() {
        if !matches!(
            r.kind,
            ArtifactKind::ThemesVideo | ArtifactKind::ThemesChannel | ArtifactKind::SuggestionsVideo | ArtifactKind::SuggestionsChannel
        ) {
            continue;
        }
        let report: ThemeReport = serde_json::from_slice(&store.blob(&r.blob).unwrap().unwrap()).unwrap();
        let scope_ids: HashSet<String> = match &report.scope {
            Scope::Channel => store.all_comments(snap).unwrap(),
            Scope::Video(v) => store.comments_for_video(snap, v).unwrap(),
        }
        .into_iter()
        .map(|c| c.comment_id)
        .collect();
        for item in &report.items {
            for c in &item.citations {
                match (&c.status, &c.matched_comment_id) {
                    (MatchStatus::Unmatched, None) => {}
                    (_, Some(id)) => {
                        assert!(scope_ids.contains(id), "{id} outside scope");
                        assert!(report.cited_comments.contains_key(id));
                        checked += 1;
                    }
                    other => panic!("inconsistent citation {other:?}"),
                }
            }
        }
    }
    assert!(checked > 0);
}

#[tokio::test]
async fn same_seed_gives_identical_bytes_across_databases() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (s1, cfg) = ingested(&d1).await;
    let (s2, _) = ingested(&d2).await;
    let a = analyze(&s1, &cfg, &Models::stubs(), ALL).await.unwrap();
    let b = analyze(&s2, &cfg, &Models::stubs(), ALL).await.unwrap();
    assert_eq!(blobs(&s1, &a), blobs(&s2, &b));
}

#[tokio::test]
async fn second_run_reuses_everything() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let first = analyze(&store, &cfg, &Models::stubs(), ALL).await.unwrap();
    let second = analyze(&store, &cfg, &Models::stubs(), ALL).await.unwrap();
    assert!(second.computed.is_empty(), "{:?}", second.computed);
    assert_eq!(second.reused.len(), first.computed.len());
    assert_eq!(first.snapshot.artifact_index, second.snapshot.artifact_index);
    assert!(second.snapshot.snapshot_id > first.snapshot.snapshot_id);
}

#[tokio::test]
async fn different_seed_recomputes_seeded_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (store, mut cfg) = ingested(&dir).await;
    analyze(&store, &cfg, &Models::stubs(), "sentiment,topics").await.unwrap();
    cfg.seed += 1;
    let out = analyze(&store, &cfg, &Models::stubs(), "sentiment,topics").await.unwrap();
    assert!(out.computed.iter().any(|s| s.starts_with("topics/")));
    assert!(out.reused.iter().any(|s| s.starts_with("sentiment/")));
}

#[tokio::test]
async fn sentiment_only_run_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let out = analyze(&store, &cfg, &Models::stubs(), "sentiment").await.unwrap();
    assert_eq!(out.snapshot.kinds(), [ArtifactKind::Sentiment].into_iter().collect());
    assert_eq!(out.snapshot.artifact_index.len(), 3);
}

#[tokio::test]
async fn topics_without_sentiment_is_a_missing_dependency() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let err = analyze(&store, &cfg, &Models::stubs(), "topics").await.unwrap_err();
    assert!(matches!(&err, Error::MissingDependency { missing, .. } if missing == "sentiment"), "{err}");
    assert_eq!(err.code(), "missing_dependency");
    assert!(store.current_snapshot().unwrap().is_none());

    // Once sentiment exists, the same request succeeds from the cache.
    analyze(&store, &cfg, &Models::stubs(), "sentiment").await.unwrap();
    let out = analyze(&store, &cfg, &Models::stubs(), "topics").await.unwrap();
    assert!(out.snapshot.artifact(ArtifactKind::Topics, &Scope::Channel).is_some());
}

#[tokio::test]
async fn failing_llm_degrades_instead_of_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let models = Models { llm: Arc::new(StubLlm::failing()), ..Models::stubs() };
    let out = analyze(&store, &cfg, &models, ALL).await.unwrap();
    let kinds = out.snapshot.kinds();
    assert!(!kinds.contains(&ArtifactKind::ThemesChannel));
    assert!(!kinds.contains(&ArtifactKind::SuggestionsVideo));
    assert!(kinds.contains(&ArtifactKind::Stats));
    assert!(kinds.contains(&ArtifactKind::Alerts));
    assert!(out.snapshot.degraded.contains_key("themes_channel/channel"), "{:?}", out.snapshot.degraded);
    assert!(out.snapshot.degraded.keys().any(|k| k.starts_with("topics/")));
    let topics: TopicModel = artifact(&store, &out, ArtifactKind::Topics, &Scope::Channel);
    assert!(topics.degraded());
}

#[tokio::test]
async fn empty_store_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("db.sqlite")).unwrap();
    let err = analyze(&store, &demo_config(), &Models::stubs(), ALL).await.unwrap_err();
    assert_eq!(err.code(), "ingest_empty");
}

#[tokio::test]
async fn incremental_fixture_adds_only_new_comments() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let before: HashSet<String> = store.all_comments(View::Working).unwrap().into_iter().map(|c| c.comment_id).collect();
    let later = Utc.with_ymd_and_hms(2026, 3, 8, 12, 0, 0).unwrap();
    let m = ingest(&store, &cfg, &IngestSource::Fixture(demo_dir().join("next")), false, later).await.unwrap();
    assert_eq!(m.comments_fetched, 5);
    let after = store.all_comments(View::Working).unwrap();
    assert_eq!(after.len(), 1505);
    let added: Vec<_> = after.iter().filter(|c| !before.contains(&c.comment_id)).collect();
    assert_eq!(added.len(), 5);

    // A re-sync of the same bundle adds nothing.
    let m = ingest(&store, &cfg, &IngestSource::Fixture(demo_dir().join("next")), false, later).await.unwrap();
    assert_eq!(m.comments_fetched, 0);
}

#[tokio::test]
async fn snapshots_are_isolated_from_later_ingests() {
    let dir = tempfile::tempdir().unwrap();
    let (store, cfg) = ingested(&dir).await;
    let out = analyze(&store, &cfg, &Models::stubs(), "sentiment").await.unwrap();
    let later = Utc.with_ymd_and_hms(2026, 3, 8, 12, 0, 0).unwrap();
    ingest(&store, &cfg, &IngestSource::Fixture(demo_dir().join("next")), false, later).await.unwrap();
    let pinned = View::Snapshot(out.snapshot.snapshot_id);
    assert_eq!(store.comment_count(pinned).unwrap(), 1500);
    assert_eq!(store.comment_count(View::Working).unwrap(), 1505);
}
