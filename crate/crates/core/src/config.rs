//! Deployment configuration, loaded from a TOML file.
//!
//! Relative paths in the file are resolved against the file's directory.
//! Secrets (API keys) are never read from the file, only from the
//! environment variables it names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alerts::AlertConfig;
use crate::analytics::AnalyticsParams;
use crate::error::{Error, Result};
use crate::themes::ThemeParams;
use crate::topics::TopicParams;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub models: ModelConfig,
    #[serde(default)]
    pub prompts: PromptPaths,
    #[serde(default)]
    pub themes: ThemeParams,
    #[serde(default)]
    pub topics: TopicParams,
    #[serde(default)]
    pub alerts: AlertConfig,
    #[serde(default)]
    pub analytics: AnalyticsParams,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    /// Substituted into the suggestions prompt.
    #[serde(default = "default_org")]
    pub org_name: String,
}

fn default_org() -> String {
    "our newsroom".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    #[serde(default = "default_db")]
    pub database: PathBuf,
}

fn default_db() -> PathBuf {
    PathBuf::from("commentscope.db")
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig { database: default_db() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default = "default_api_base")]
    pub api_base: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_videos: usize,
    #[serde(default = "default_rps")]
    pub requests_per_second: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_api_base() -> String {
    "https://www.googleapis.com/youtube/v3".into()
}
fn default_api_key_env() -> String {
    "YOUTUBE_API_KEY".into()
}
fn default_concurrency() -> usize {
    4
}
fn default_rps() -> f64 {
    5.0
}
fn default_retries() -> u32 {
    5
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            fixture: None,
            api_base: default_api_base(),
            api_key_env: default_api_key_env(),
            max_concurrent_videos: default_concurrency(),
            requests_per_second: default_rps(),
            max_retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_sentiment_model")]
    pub sentiment: String,
    #[serde(default)]
    pub sentiment_endpoint: Option<String>,
    #[serde(default = "default_batch")]
    pub sentiment_batch_size: usize,
    #[serde(default = "default_max_tokens")]
    pub sentiment_max_tokens: usize,
    #[serde(default = "default_embedding_model")]
    pub embedding: String,
    #[serde(default)]
    pub embedding_endpoint: Option<String>,
    #[serde(default = "default_llm")]
    pub llm: String,
    #[serde(default = "default_llm_endpoint")]
    pub llm_endpoint: String,
    #[serde(default = "default_llm_key_env")]
    pub llm_api_key_env: String,
    #[serde(default = "default_in_flight")]
    pub llm_max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub llm_max_retries: u32,
}

pub const PRODUCTION_SENTIMENT_MODEL: &str = "cardiffnlp/twitter-roberta-base-sentiment-latest";
pub const PRODUCTION_EMBEDDING_MODEL: &str = "all-mpnet-base-v2";
pub const PRODUCTION_LLM: &str = "gpt-4";

fn default_sentiment_model() -> String {
    PRODUCTION_SENTIMENT_MODEL.into()
}
fn default_embedding_model() -> String {
    PRODUCTION_EMBEDDING_MODEL.into()
}
fn default_llm() -> String {
    PRODUCTION_LLM.into()
}
fn default_llm_endpoint() -> String {
    "https://api.openai.com/v1".into()
}
fn default_llm_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_batch() -> usize {
    64
}
fn default_max_tokens() -> usize {
    512
}
fn default_in_flight() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sentiment: default_sentiment_model(),
            sentiment_endpoint: None,
            sentiment_batch_size: default_batch(),
            sentiment_max_tokens: default_max_tokens(),
            embedding: default_embedding_model(),
            embedding_endpoint: None,
            llm: default_llm(),
            llm_endpoint: default_llm_endpoint(),
            llm_api_key_env: default_llm_key_env(),
            llm_max_in_flight: default_in_flight(),
            llm_max_retries: default_retries(),
        }
    }
}

/// Optional overrides for the shipped prompt templates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    #[serde(default)]
    pub themes: Option<PathBuf>,
    #[serde(default)]
    pub suggestions: Option<PathBuf>,
    #[serde(default)]
    pub topic_label: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_cors")]
    pub cors_origins: Vec<String>,
}

fn default_cors() -> Vec<String> {
    vec!["http://localhost:5173".into()]
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { cors_origins: default_cors() }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_SEED,
            channel: ChannelConfig { org_name: default_org(), ..Default::default() },
            storage: StorageConfig::default(),
            ingest: IngestConfig::default(),
            models: ModelConfig::default(),
            prompts: PromptPaths::default(),
            themes: ThemeParams::default(),
            topics: TopicParams::default(),
            alerts: AlertConfig::default(),
            analytics: AnalyticsParams::default(),
            service: ServiceConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "<file>".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .map(|s| format!("<offset {}>", s.start))
                .unwrap_or_else(|| "<file>".into()),
            reason: e.message().to_string(),
        })
    }

    /// Resolve a possibly relative path against the config directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn database_path(&self) -> PathBuf {
        self.resolve(&self.storage.database)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &str, reason: impl Into<String>) -> Error {
            Error::Config { field: field.into(), reason: reason.into() }
        }
        if self.models.sentiment_batch_size == 0 {
            return Err(bad("models.sentiment_batch_size", "must be at least 1"));
        }
        if self.models.sentiment_max_tokens == 0 {
            return Err(bad("models.sentiment_max_tokens", "must be at least 1"));
        }
        if self.models.llm_max_in_flight == 0 {
            return Err(bad("models.llm_max_in_flight", "must be at least 1"));
        }
        if !(self.ingest.requests_per_second > 0.0) {
            return Err(bad("ingest.requests_per_second", "must be positive"));
        }
        if self.ingest.max_concurrent_videos == 0 {
            return Err(bad("ingest.max_concurrent_videos", "must be at least 1"));
        }
        self.themes.validate()?;
        self.topics.validate()?;
        self.alerts.validate()?;
        self.analytics.validate()?;
        for (field, p) in [
            ("prompts.themes", &self.prompts.themes),
            ("prompts.suggestions", &self.prompts.suggestions),
            ("prompts.topic_label", &self.prompts.topic_label),
            ("analytics.extra_stopwords", &self.analytics.extra_stopwords),
        ] {
            if let Some(p) = p {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(bad(field, format!("{} does not exist", full.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.models.sentiment, PRODUCTION_SENTIMENT_MODEL);
        assert_eq!(cfg.models.embedding, PRODUCTION_EMBEDDING_MODEL);
        assert_eq!(cfg.models.llm, PRODUCTION_LLM);
        assert_eq!(cfg.analytics.superfan_min_comments, 200);
        assert_eq!(cfg.themes.sample_size, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[topics]\nbogus = 1\n").is_err());
    }

    #[test]
    fn invalid_value_names_the_field() {
        let cfg = Config::parse("[alerts]\nalpha = 0.0\n").unwrap();
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "alerts.alpha"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
