//! Thin client for the commentscope HTTP API, plus the static bundle writer
//! used by `commentscope report`.

mod bundle;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use bundle::{write_bundle, BundleSummary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub status: u16,
    pub code: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{} {}: {}", .0.status, .0.code, .0.message)]
    Api(ApiErrorBody),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ClientError {
    /// Machine code: the API error code, or a transport class.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api(b) => &b.code,
            ClientError::Transport(_) => "service_unreachable",
            ClientError::Decode(_) => "bad_response",
            ClientError::Io(_) => "io_error",
        }
    }

    pub fn is_not_computed(&self) -> bool {
        self.code() == "not_computed"
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub snapshot_id: u64,
    pub data: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: u32,
    pub page_size: u32,
    pub total: u64,
}

impl<T> Page<T> {
    pub fn total_pages(&self) -> u64 {
        self.total.div_ceil(u64::from(self.page_size.max(1)))
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    snapshot: Option<u64>,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client { http: reqwest::Client::new(), base: base.into().trim_end_matches('/').to_string(), snapshot: None }
    }

    /// Pin all further requests to one snapshot.
    pub fn pinned(&self, snapshot_id: u64) -> Self {
        Client { snapshot: Some(snapshot_id), ..self.clone() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// GET an API path and decode the envelope.
    pub async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<Envelope<T>> {
        let mut q: Vec<(&str, String)> = query.to_vec();
        if let Some(s) = self.snapshot {
            q.push(("snapshot", s.to_string()));
        }
        let url = format!("{}{}", self.base, path);
        tracing::debug!(%url, "GET");
        let resp = self.http.get(&url).query(&q).send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ApiErrorBody>(&bytes) {
                Ok(body) => ClientError::Api(body),
                Err(_) => ClientError::Decode(format!("{status} with non-JSON body")),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(format!("{path}: {e}")))
    }

    pub async fn health(&self) -> Result<()> {
        let resp = self.http.get(format!("{}/api/health", self.base)).send().await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Decode(format!("health check returned {}", resp.status())))
        }
    }

    pub async fn snapshot(&self) -> Result<Envelope<Value>> {
        self.get("/api/snapshot", &[]).await
    }

    pub async fn channel(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel", &[]).await
    }

    pub async fn channel_themes(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel/themes", &[]).await
    }

    pub async fn channel_suggestions(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel/suggestions", &[]).await
    }

    pub async fn topics(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel/topics", &[]).await
    }

    pub async fn topic_comments(&self, cluster_id: i64, page: u32) -> Result<Envelope<Page<Value>>> {
        self.get(&format!("/api/channel/topics/{cluster_id}/comments"), &[("page", page.to_string())]).await
    }

    pub async fn alerts(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel/alerts", &[]).await
    }

    pub async fn superfans(&self) -> Result<Envelope<Value>> {
        self.get("/api/channel/superfans", &[]).await
    }

    pub async fn videos(&self, sort: Option<&str>, direction: Option<&str>) -> Result<Envelope<Vec<Value>>> {
        let mut q = Vec::new();
        if let Some(s) = sort {
            q.push(("sort", s.to_string()));
        }
        if let Some(d) = direction {
            q.push(("direction", d.to_string()));
        }
        self.get("/api/videos", &q).await
    }

    pub async fn video_stats(&self, id: &str) -> Result<Envelope<Value>> {
        self.get(&format!("/api/videos/{id}/stats"), &[]).await
    }

    pub async fn video_themes(&self, id: &str) -> Result<Envelope<Value>> {
        self.get(&format!("/api/videos/{id}/themes"), &[]).await
    }

    pub async fn video_suggestions(&self, id: &str) -> Result<Envelope<Value>> {
        self.get(&format!("/api/videos/{id}/suggestions"), &[]).await
    }

    pub async fn video_timeseries(&self, id: &str, bucket: &str) -> Result<Envelope<Value>> {
        self.get(&format!("/api/videos/{id}/timeseries"), &[("bucket", bucket.to_string())]).await
    }

    pub async fn video_wordcloud(&self, id: &str, k: Option<usize>) -> Result<Envelope<Value>> {
        let q: Vec<_> = k.map(|k| ("k", k.to_string())).into_iter().collect();
        self.get(&format!("/api/videos/{id}/wordcloud"), &q).await
    }

    pub async fn video_comments(&self, id: &str, page: u32, page_size: u32) -> Result<Envelope<Page<Value>>> {
        self.get(
            &format!("/api/videos/{id}/comments"),
            &[("page", page.to_string()), ("page_size", page_size.to_string())],
        )
        .await
    }
}
