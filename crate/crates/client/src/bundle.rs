use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::{Client, ClientError, Envelope, Result};

const COMMENT_PAGE_SIZE: u32 = 500;

#[derive(Debug, Clone, Serialize)]
pub struct BundleSummary {
    pub snapshot_id: u64,
    pub files: Vec<PathBuf>,
    pub not_computed: Vec<String>,
}

struct Writer<'a> {
    root: &'a Path,
    summary: BundleSummary,
}

impl Writer<'_> {
    fn write(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let body = serde_json::to_vec_pretty(value).map_err(|e| ClientError::Decode(e.to_string()))?;
        std::fs::write(&path, body)?;
        self.summary.files.push(PathBuf::from(rel));
        Ok(())
    }

    /// Write an optional artifact; `not_computed` is recorded, not fatal.
    fn write_opt(&mut self, rel: &str, r: Result<Envelope<Value>>) -> Result<Option<Value>> {
        match r {
            Ok(env) => {
                self.write(rel, &env)?;
                Ok(Some(env.data))
            }
            Err(e) if e.is_not_computed() => {
                self.summary.not_computed.push(rel.to_string());
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Dump every artifact of one snapshot into `out` as a static bundle whose
/// file layout mirrors the API paths. Each file holds the same envelope the
/// API returns.
pub async fn write_bundle(client: &Client, out: &Path) -> Result<BundleSummary> {
    let snap = client.snapshot().await?;
    let client = client.pinned(snap.snapshot_id);
    let mut w = Writer { root: out, summary: BundleSummary { snapshot_id: snap.snapshot_id, files: vec![], not_computed: vec![] } };
    w.write("snapshot.json", &snap)?;

    w.write_opt("channel.json", client.channel().await)?;
    w.write_opt("channel/themes.json", client.channel_themes().await)?;
    w.write_opt("channel/suggestions.json", client.channel_suggestions().await)?;
    w.write_opt("channel/alerts.json", client.alerts().await)?;
    w.write_opt("channel/superfans.json", client.superfans().await)?;
    if let Some(table) = w.write_opt("channel/topics.json", client.topics().await)? {
        let ids: Vec<i64> = table["clusters"]
            .as_array()
            .map(|a| a.iter().filter_map(|c| c["cluster_id"].as_i64()).collect())
            .unwrap_or_default();
        for cid in ids {
            let mut page = 1;
            loop {
                let env = client.topic_comments(cid, page).await?;
                let last = u64::from(page) >= env.data.total_pages();
                w.write(&format!("channel/topics/{cid}/comments/{page}.json"), &env)?;
                if last {
                    break;
                }
                page += 1;
            }
        }
    }

    let videos = client.videos(None, None).await?;
    w.write("videos.json", &videos)?;
    for v in &videos.data {
        let Some(id) = v["video_id"].as_str() else {
            return Err(ClientError::Decode("video without video_id".into()));
        };
        let dir = format!("videos/{id}");
        w.write_opt(&format!("{dir}/stats.json"), client.video_stats(id).await)?;
        w.write_opt(&format!("{dir}/themes.json"), client.video_themes(id).await)?;
        w.write_opt(&format!("{dir}/suggestions.json"), client.video_suggestions(id).await)?;
        w.write_opt(&format!("{dir}/wordcloud.json"), client.video_wordcloud(id, None).await)?;
        for bucket in ["day", "week", "month"] {
            w.write(&format!("{dir}/timeseries-{bucket}.json"), &client.video_timeseries(id, bucket).await?)?;
        }
        let mut page = 1;
        loop {
            let env = client.video_comments(id, page, COMMENT_PAGE_SIZE).await?;
            let last = u64::from(page) >= env.data.total_pages();
            w.write(&format!("{dir}/comments/{page}.json"), &env)?;
            if last {
                break;
            }
            page += 1;
        }
    }
    let manifest = json!({
        "snapshot_id": w.summary.snapshot_id,
        "comment_page_size": COMMENT_PAGE_SIZE,
        "not_computed": w.summary.not_computed,
    });
    w.write("manifest.json", &manifest)?;
    Ok(w.summary)
}
