//! Analysis runs: compute the requested stages over the working data set,
//! cache every artifact under its config digest, and publish one snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::future::join_all;
use serde::Serialize;
use serde_json::json;

use crate::alerts::{detect_sentiment_alerts, detect_update_requests, detect_volume_alerts, Alert, UpdateRequestMatcher};
use crate::analytics::{bucket_start, channel_summary, superfans, video_summary, wordcloud_terms};
use crate::canonical::{digest_of, to_canonical_json, Fingerprint};
use crate::config::Config;
use crate::datastore::{ArtifactIndex, ArtifactKey, ArtifactKind, ArtifactRef, CorpusSnapshot, Store, View};
use crate::error::{Error, Result};
use crate::ingestion::{self, YouTubeClient, YouTubeOptions};
use crate::llm::{CachedLlm, LanguageModel, OpenAiChat, StubLlm};
use crate::model::{ChannelRef, CommentRecord, FetchManifest, Scope, VideoRecord};
use crate::sentiment::{score_comments, HttpSentimentModel, LexiconClassifier, ScoredComment, SentimentModel};
use crate::text::Stopwords;
use crate::themes::{self, generate_report, sample_comments, ReportKind, ReportRequest};
use crate::topics::{self, discover_topics, Embedder, HashingEmbedder, HttpEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Sentiment,
    Stats,
    Topics,
    Themes,
    Alerts,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Sentiment, Stage::Stats, Stage::Topics, Stage::Themes, Stage::Alerts];
    /// What `analyze` runs by default: everything except ingest.
    pub const ANALYSIS: [Stage; 5] = [Stage::Sentiment, Stage::Stats, Stage::Topics, Stage::Themes, Stage::Alerts];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Sentiment => "sentiment",
            Stage::Stats => "stats",
            Stage::Topics => "topics",
            Stage::Themes => "themes",
            Stage::Alerts => "alerts",
        }
    }

    fn needs_sentiment(self) -> bool {
        matches!(self, Stage::Stats | Stage::Topics | Stage::Alerts)
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

/// Parse a comma-separated stage list.
pub fn parse_stages(s: &str) -> Result<BTreeSet<Stage>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(Stage::from_str).collect()
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub stages: BTreeSet<Stage>,
    pub seed: u64,
}

impl RunSpec {
    pub fn analysis(seed: u64) -> Self {
        RunSpec { stages: Stage::ANALYSIS.into_iter().collect(), seed }
    }
}

/// Model plugins used by a run.
#[derive(Clone)]
pub struct Models {
    pub sentiment: Arc<dyn SentimentModel>,
    pub embedder: Arc<dyn Embedder>,
    pub llm: Arc<dyn LanguageModel>,
}

fn is_stub(id: &str) -> bool {
    id.starts_with("stub-")
}

impl Models {
    /// Deterministic stand-ins for all three models.
    pub fn stubs() -> Self {
        Models {
            sentiment: Arc::new(LexiconClassifier::bundled()),
            embedder: Arc::new(HashingEmbedder::default()),
            llm: Arc::new(StubLlm::heuristic()),
        }
    }

    /// Build from configuration. Model IDs starting with `stub-` select the
    /// bundled stand-ins; others need an endpoint. LLM replies are cached in
    /// the store.
    pub fn from_config(cfg: &Config, store: &Store) -> Result<Self> {
        let m = &cfg.models;
        let sentiment: Arc<dyn SentimentModel> = match &m.sentiment_endpoint {
            Some(url) => Arc::new(HttpSentimentModel::new(&m.sentiment, url, m.sentiment_batch_size)),
            None if is_stub(&m.sentiment) => Arc::new(LexiconClassifier::bundled()),
            None => {
                return Err(Error::ModelUnavailable(format!(
                    "{}: set models.sentiment_endpoint or use a stub model",
                    m.sentiment
                )))
            }
        };
        let embedder: Arc<dyn Embedder> = match &m.embedding_endpoint {
            Some(url) => Arc::new(HttpEmbedder::new(&m.embedding, url)),
            None if is_stub(&m.embedding) => Arc::new(HashingEmbedder::default()),
            None => {
                return Err(Error::ModelUnavailable(format!(
                    "{}: set models.embedding_endpoint or use a stub model",
                    m.embedding
                )))
            }
        };
        let inner: Arc<dyn LanguageModel> = if is_stub(&m.llm) {
            Arc::new(StubLlm::heuristic())
        } else {
            let key = std::env::var(&m.llm_api_key_env).ok();
            Arc::new(
                OpenAiChat::new(&m.llm, &m.llm_endpoint, key)
                    .with_limiter(Arc::new(tokio::sync::Semaphore::new(m.llm_max_in_flight)))
                    .with_retries(m.llm_max_retries, Duration::from_millis(500)),
            )
        };
        Ok(Models { sentiment, embedder, llm: Arc::new(CachedLlm::new(inner, store.clone())) })
    }
}

/// Prompt templates in effect for a run.
#[derive(Debug, Clone)]
pub struct Prompts {
    pub themes: String,
    pub suggestions: String,
    pub topic_label: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            themes: themes::THEMES_TEMPLATE.into(),
            suggestions: themes::SUGGESTIONS_TEMPLATE.into(),
            topic_label: topics::TOPIC_LABEL_TEMPLATE.into(),
        }
    }
}

impl Prompts {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let read = |p: &Option<std::path::PathBuf>, default: &str| -> Result<String> {
            match p {
                Some(p) => Ok(std::fs::read_to_string(cfg.resolve(p))?),
                None => Ok(default.to_string()),
            }
        };
        Ok(Prompts {
            themes: read(&cfg.prompts.themes, themes::THEMES_TEMPLATE)?,
            suggestions: read(&cfg.prompts.suggestions, themes::SUGGESTIONS_TEMPLATE)?,
            topic_label: read(&cfg.prompts.topic_label, topics::TOPIC_LABEL_TEMPLATE)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub snapshot: CorpusSnapshot,
    /// Slots whose artifact was computed in this run.
    pub computed: Vec<String>,
    /// Slots served from the artifact cache.
    pub reused: Vec<String>,
}

struct Ctx<'a> {
    store: &'a Store,
    cfg: &'a Config,
    models: &'a Models,
    prompts: &'a Prompts,
    seed: u64,
    index: ArtifactIndex,
    degraded: BTreeMap<String, String>,
    computed: Vec<String>,
    reused: Vec<String>,
}

impl Ctx<'_> {
    fn key(&self, kind: ArtifactKind, scope: &Scope, inputs: serde_json::Value) -> Result<ArtifactKey> {
        let digest = digest_of(&json!({ "kind": kind.as_str(), "scope": scope.as_id(), "inputs": inputs }))?;
        Ok(ArtifactKey::new(kind, scope.clone(), digest))
    }

    fn cached(&mut self, key: &ArtifactKey) -> Result<Option<Vec<u8>>> {
        let hit = self.store.artifact_ref(key)?;
        if let Some((hash, body)) = hit {
            self.record(key, hash, false);
            return Ok(Some(body));
        }
        Ok(None)
    }

    fn put<T: Serialize>(&mut self, key: &ArtifactKey, value: &T) -> Result<Vec<u8>> {
        let body = to_canonical_json(value)?;
        let hash = self.store.put_artifact(key, &body)?;
        self.record(key, hash, true);
        Ok(body)
    }

    fn record(&mut self, key: &ArtifactKey, hash: String, computed: bool) {
        let slot = key.slot();
        if computed {
            self.computed.push(slot.clone());
        } else {
            self.reused.push(slot.clone());
        }
        self.index.insert(
            slot,
            ArtifactRef {
                kind: key.kind,
                scope_id: key.scope_id.clone(),
                config_digest: key.config_digest.clone(),
                blob: hash,
            },
        );
    }
}

fn fingerprint_comments(comments: &[&CommentRecord]) -> String {
    let mut f = Fingerprint::new();
    for c in comments {
        f.push(&c.comment_id)
            .push(&c.video_id)
            .push(c.parent_id.as_deref().unwrap_or(""))
            .push(&c.author_id)
            .push(&c.author_display)
            .push(&c.text)
            .push(&c.published_at.to_rfc3339())
            .push(&c.like_count.to_string());
    }
    f.finish()
}

fn fingerprint_videos(videos: &[VideoRecord]) -> Result<String> {
    digest_of(videos)
}

/// Run `run` and publish the result as the new current snapshot.
pub async fn run_pipeline(
    store: &Store,
    cfg: &Config,
    models: &Models,
    prompts: &Prompts,
    run: &RunSpec,
    now: DateTime<Utc>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if run.stages.contains(&Stage::Ingest) {
        ingest(store, cfg, &IngestSource::from_config(cfg)?, false, now).await?;
    }
    let videos = store.videos(View::Working)?;
    if videos.is_empty() {
        return Err(Error::IngestEmpty);
    }
    let comments = store.all_comments(View::Working)?;
    let as_of = videos.iter().map(|v| v.fetched_at).max().expect("non-empty");

    let mut by_video: BTreeMap<&str, Vec<&CommentRecord>> = videos.iter().map(|v| (v.video_id.as_str(), Vec::new())).collect();
    for c in &comments {
        if let Some(list) = by_video.get_mut(c.video_id.as_str()) {
            list.push(c);
        }
    }
    let all_refs: Vec<&CommentRecord> = comments.iter().collect();
    let video_fp: BTreeMap<&str, String> = by_video.iter().map(|(v, cs)| (*v, fingerprint_comments(cs))).collect();
    let channel_fp = fingerprint_comments(&all_refs);

    let mut ctx = Ctx {
        store,
        cfg,
        models,
        prompts,
        seed: run.seed,
        index: ArtifactIndex::new(),
        degraded: BTreeMap::new(),
        computed: Vec::new(),
        reused: Vec::new(),
    };

    // Sentiment, per video.
    let wants_sentiment = run.stages.contains(&Stage::Sentiment);
    let needs_sentiment = run.stages.iter().find(|s| s.needs_sentiment()).copied();
    let mut scalars: HashMap<String, f64> = HashMap::new();
    if wants_sentiment || needs_sentiment.is_some() {
        for v in &videos {
            let scope = Scope::Video(v.video_id.clone());
            let key = ctx.key(
                ArtifactKind::Sentiment,
                &scope,
                json!({
                    "model": models.sentiment.model_id(),
                    "max_tokens": cfg.models.sentiment_max_tokens,
                    "data": video_fp[v.video_id.as_str()],
                }),
            )?;
            let scored: Vec<ScoredComment> = match ctx.cached(&key)? {
                Some(body) => serde_json::from_slice(&body)?,
                None if wants_sentiment => {
                    let owned: Vec<CommentRecord> = by_video[v.video_id.as_str()].iter().map(|c| (*c).clone()).collect();
                    let scored = score_comments(
                        models.sentiment.as_ref(),
                        &owned,
                        cfg.models.sentiment_batch_size,
                        cfg.models.sentiment_max_tokens,
                    )
                    .await?;
                    ctx.put(&key, &scored)?;
                    scored
                }
                None => {
                    return Err(Error::MissingDependency {
                        stage: needs_sentiment.expect("checked").as_str().into(),
                        missing: "sentiment".into(),
                    })
                }
            };
            scalars.extend(scored.into_iter().map(|s| (s.comment_id, s.scalar)));
        }
    }

    if run.stages.contains(&Stage::Stats) {
        stats_stage(&mut ctx, &videos, &comments, &by_video, &video_fp, &channel_fp, &scalars)?;
    }
    if run.stages.contains(&Stage::Topics) {
        topics_stage(&mut ctx, &videos, &comments, &by_video, &video_fp, &channel_fp, &scalars).await?;
    }
    if run.stages.contains(&Stage::Themes) {
        themes_stage(&mut ctx, &videos, &comments, &by_video, &video_fp, &channel_fp, as_of).await?;
    }
    if run.stages.contains(&Stage::Alerts) {
        alerts_stage(&mut ctx, &videos, &by_video, &video_fp, &scalars, as_of)?;
    }

    let Ctx { index, degraded, computed, reused, .. } = ctx;
    let snapshot = store.publish_snapshot(index, degraded, now)?;
    tracing::info!(
        snapshot = snapshot.snapshot_id,
        computed = computed.len(),
        reused = reused.len(),
        "published snapshot"
    );
    Ok(RunOutcome { snapshot, computed, reused })
}

/// Where `ingest` reads from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestSource {
    Fixture(PathBuf),
    Channel(String),
}

impl IngestSource {
    /// The configured fixture, else the configured channel.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        if let Some(dir) = &cfg.ingest.fixture {
            return Ok(IngestSource::Fixture(cfg.resolve(dir)));
        }
        if cfg.channel.id.is_empty() {
            return Err(Error::Config { field: "channel.id".into(), reason: "required when no fixture is set".into() });
        }
        Ok(IngestSource::Channel(cfg.channel.id.clone()))
    }
}

/// Fetch into the datastore. Unless `full`, only comments newer than the
/// last fetch are read; an interrupted API fetch resumes from its cursor.
pub async fn ingest(store: &Store, cfg: &Config, source: &IngestSource, full: bool, now: DateTime<Utc>) -> Result<FetchManifest> {
    match source {
        IngestSource::Fixture(dir) if full => ingestion::ingest_fixture(store, dir, now),
        IngestSource::Fixture(dir) => ingestion::sync_fixture(store, dir, now),
        IngestSource::Channel(id) => {
            let key = std::env::var(&cfg.ingest.api_key_env).map_err(|_| Error::Config {
                field: "ingest.api_key_env".into(),
                reason: format!("environment variable {} is not set", cfg.ingest.api_key_env),
            })?;
            let mut opts = YouTubeOptions::new(&cfg.ingest.api_base, key);
            opts.requests_per_second = cfg.ingest.requests_per_second;
            opts.max_retries = cfg.ingest.max_retries;
            opts.max_concurrent_videos = cfg.ingest.max_concurrent_videos;
            let client = YouTubeClient::new(opts);
            let mut channel = ChannelRef::new(id);
            channel.display_name = cfg.channel.display_name.clone();
            let incremental = !full && store.channel()?.is_some_and(|c| c.last_fetch_at.is_some());
            let resume = store
                .last_manifest(id)?
                .filter(|m| m.finished_at.is_none())
                .and_then(|m| m.resume_cursor);
            ingestion::fetch_channel(store, &client, &channel, incremental, resume.as_deref(), now).await
        }
    }
}

fn stats_stage(
    ctx: &mut Ctx<'_>,
    videos: &[VideoRecord],
    comments: &[CommentRecord],
    by_video: &BTreeMap<&str, Vec<&CommentRecord>>,
    video_fp: &BTreeMap<&str, String>,
    channel_fp: &str,
    scalars: &HashMap<String, f64>,
) -> Result<()> {
    let a = &ctx.cfg.analytics;
    let mut stopwords = Stopwords::english();
    let mut extra = String::new();
    if let Some(p) = &a.extra_stopwords {
        let path = ctx.cfg.resolve(p);
        stopwords.extend_from_file(&path)?;
        extra = std::fs::read_to_string(&path)?;
    }
    let stopword_fp = crate::canonical::sha256_hex(extra.as_bytes());
    let sentiment_model = ctx.models.sentiment.model_id().to_string();
    for v in videos {
        let scope = Scope::Video(v.video_id.clone());
        let cs: Vec<CommentRecord> = by_video[v.video_id.as_str()].iter().map(|c| (*c).clone()).collect();
        let fp = &video_fp[v.video_id.as_str()];

        let key = ctx.key(ArtifactKind::Stats, &scope, json!({"video": v, "data": fp, "sentiment": sentiment_model}))?;
        if ctx.cached(&key)?.is_none() {
            ctx.put(&key, &video_summary(v, &cs, Some(scalars)))?;
        }

        let key = ctx.key(
            ArtifactKind::Wordcloud,
            &scope,
            json!({"k": a.wordcloud_k, "stopwords": stopword_fp, "data": fp, "sentiment": sentiment_model}),
        )?;
        if ctx.cached(&key)?.is_none() {
            let terms = wordcloud_terms(
                cs.iter().map(|c| (c.text.as_str(), scalars.get(&c.comment_id).copied().unwrap_or(0.0))),
                &stopwords,
                a.wordcloud_k,
            );
            ctx.put(&key, &terms)?;
        }
    }

    let key = ctx.key(
        ArtifactKind::Stats,
        &Scope::Channel,
        json!({"videos": fingerprint_videos(videos)?, "data": channel_fp, "sentiment": sentiment_model}),
    )?;
    if ctx.cached(&key)?.is_none() {
        ctx.put(&key, &channel_summary(videos, comments, Some(scalars)))?;
    }

    let key = ctx.key(
        ArtifactKind::Superfans,
        &Scope::Channel,
        json!({
            "min": a.superfan_min_comments,
            "top_n": a.superfan_top_n,
            "replies": a.superfan_include_replies,
            "data": channel_fp,
            "sentiment": sentiment_model,
        }),
    )?;
    if ctx.cached(&key)?.is_none() {
        let fans = superfans(comments, scalars, a.superfan_min_comments, a.superfan_top_n, a.superfan_include_replies);
        ctx.put(&key, &fans)?;
    }
    Ok(())
}

async fn topics_stage(
    ctx: &mut Ctx<'_>,
    videos: &[VideoRecord],
    comments: &[CommentRecord],
    by_video: &BTreeMap<&str, Vec<&CommentRecord>>,
    video_fp: &BTreeMap<&str, String>,
    channel_fp: &str,
    scalars: &HashMap<String, f64>,
) -> Result<()> {
    let params = ctx.cfg.topics.clone();
    let mut scopes: Vec<(Scope, Vec<CommentRecord>, String)> =
        vec![(Scope::Channel, comments.to_vec(), channel_fp.to_string())];
    if params.per_video {
        for v in videos {
            let cs = by_video[v.video_id.as_str()].iter().map(|c| (*c).clone()).collect();
            scopes.push((Scope::Video(v.video_id.clone()), cs, video_fp[v.video_id.as_str()].clone()));
        }
    }
    let scalar_refs: HashMap<&str, f64> = scalars.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    for (scope, cs, fp) in scopes {
        let key = ctx.key(
            ArtifactKind::Topics,
            &scope,
            json!({
                "params": params,
                "embedder": ctx.models.embedder.model_id(),
                "llm": ctx.models.llm.model_id(),
                "prompt": ctx.prompts.topic_label,
                "seed": ctx.seed,
                "sentiment": ctx.models.sentiment.model_id(),
                "data": fp,
            }),
        )?;
        let slot = key.slot();
        if let Some(body) = ctx.cached(&key)? {
            let model: topics::TopicModel = serde_json::from_slice(&body)?;
            if model.degraded() {
                ctx.degraded.insert(slot, "some topic labels fell back to defaults".into());
            }
            continue;
        }
        if cs.is_empty() {
            ctx.degraded.insert(slot, "scope has no comments".into());
            continue;
        }
        let model = discover_topics(
            scope,
            &cs,
            &scalar_refs,
            ctx.models.embedder.as_ref(),
            ctx.models.llm.as_ref(),
            &params,
            &ctx.prompts.topic_label,
            ctx.seed,
        )
        .await?;
        if model.degraded() {
            ctx.degraded.insert(slot, "some topic labels fell back to defaults".into());
        }
        ctx.put(&key, &model)?;
    }
    Ok(())
}

async fn themes_stage(
    ctx: &mut Ctx<'_>,
    videos: &[VideoRecord],
    comments: &[CommentRecord],
    by_video: &BTreeMap<&str, Vec<&CommentRecord>>,
    video_fp: &BTreeMap<&str, String>,
    channel_fp: &str,
    as_of: DateTime<Utc>,
) -> Result<()> {
    struct Job {
        kind: ArtifactKind,
        report: ReportKind,
        scope: Scope,
        comments: Vec<CommentRecord>,
        key: ArtifactKey,
    }
    let mut scopes: Vec<(Scope, Vec<CommentRecord>, String)> = videos
        .iter()
        .map(|v| {
            (
                Scope::Video(v.video_id.clone()),
                by_video[v.video_id.as_str()].iter().map(|c| (*c).clone()).collect(),
                video_fp[v.video_id.as_str()].clone(),
            )
        })
        .collect();
    scopes.push((Scope::Channel, comments.to_vec(), channel_fp.to_string()));

    let mut jobs = Vec::new();
    for (scope, cs, fp) in scopes {
        let is_channel = scope == Scope::Channel;
        for report in [ReportKind::Themes, ReportKind::Suggestions] {
            let (kind, template) = match (report, is_channel) {
                (ReportKind::Themes, false) => (ArtifactKind::ThemesVideo, &ctx.prompts.themes),
                (ReportKind::Themes, true) => (ArtifactKind::ThemesChannel, &ctx.prompts.themes),
                (ReportKind::Suggestions, false) => (ArtifactKind::SuggestionsVideo, &ctx.prompts.suggestions),
                (ReportKind::Suggestions, true) => (ArtifactKind::SuggestionsChannel, &ctx.prompts.suggestions),
            };
            let key = ctx.key(
                kind,
                &scope,
                json!({
                    "params": ctx.cfg.themes,
                    "llm": ctx.models.llm.model_id(),
                    "prompt": template,
                    "org": if report == ReportKind::Suggestions { ctx.cfg.channel.org_name.as_str() } else { "" },
                    "seed": ctx.seed,
                    "as_of": as_of,
                    "data": fp,
                }),
            )?;
            if ctx.cached(&key)?.is_some() {
                continue;
            }
            if cs.is_empty() {
                ctx.degraded.insert(key.slot(), "scope has no comments".into());
                continue;
            }
            jobs.push(Job { kind, report, scope: scope.clone(), comments: cs.clone(), key });
        }
    }

    let (cfg, models, prompts, seed) = (ctx.cfg, ctx.models, ctx.prompts, ctx.seed);
    let results = join_all(jobs.iter().map(|job| async move {
        let sample = sample_comments(&job.scope, &job.comments, cfg.themes.sample_size, seed)?;
        let template = match job.report {
            ReportKind::Themes => &prompts.themes,
            ReportKind::Suggestions => &prompts.suggestions,
        };
        generate_report(
            models.llm.as_ref(),
            ReportRequest {
                kind: job.report,
                sample: &sample,
                scope_comments: &job.comments,
                template,
                org_name: &cfg.channel.org_name,
                params: &cfg.themes,
                seed,
                as_of,
            },
        )
        .await
    }))
    .await;

    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(report) => {
                ctx.put(&job.key, &report)?;
            }
            Err(e @ (Error::Llm(_) | Error::EmptyScope(_))) => {
                tracing::warn!(kind = %job.kind, scope = %job.scope, error = %e, "report generation failed");
                ctx.degraded.insert(job.key.slot(), e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn alerts_stage(
    ctx: &mut Ctx<'_>,
    videos: &[VideoRecord],
    by_video: &BTreeMap<&str, Vec<&CommentRecord>>,
    video_fp: &BTreeMap<&str, String>,
    scalars: &HashMap<String, f64>,
    as_of: DateTime<Utc>,
) -> Result<()> {
    let matcher = UpdateRequestMatcher::bundled();
    let cfg = &ctx.cfg.alerts;
    let key = ctx.key(
        ArtifactKind::Alerts,
        &Scope::Channel,
        json!({
            "config": cfg,
            "lexicon": matcher.version,
            "sentiment": ctx.models.sentiment.model_id(),
            "as_of": as_of,
            "data": video_fp,
        }),
    )?;
    if ctx.cached(&key)?.is_some() {
        return Ok(());
    }
    let window_start = bucket_start(&as_of, cfg.window.bucket());
    let mut alerts: Vec<Alert> = Vec::new();
    for v in videos {
        let cs: Vec<CommentRecord> = by_video[v.video_id.as_str()].iter().map(|c| (*c).clone()).collect();
        alerts.extend(detect_volume_alerts(&v.video_id, &cs, as_of, cfg));
        alerts.extend(detect_sentiment_alerts(&v.video_id, &cs, scalars, as_of, cfg));
        alerts.extend(detect_update_requests(&v.video_id, &cs, &matcher, window_start, cfg));
    }
    ctx.put(&key, &alerts)?;
    Ok(())
}
