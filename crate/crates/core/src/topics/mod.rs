//! Channel-wide topic discovery: embed comments, reduce, density-cluster,
//! label clusters with the LLM and summarise them as a topic table.

pub mod embed;
pub mod hdbscan;
pub mod knn;
pub mod metrics;
pub mod umap;

use std::collections::HashMap;

use futures::future::join_all;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embed::{embed_comments, Embedder, EmbeddingMatrix, HashingEmbedder, HttpEmbedder};
pub use hdbscan::{Clustering, HdbscanParams};
pub use umap::{Reduced, UmapParams};

use crate::canonical::derive_seed;
use crate::error::{Error, Result};
use crate::llm::{ChatMessage, ChatRequest, LanguageModel};
use crate::model::{CommentRecord, Scope};
use crate::themes::render_prompt;

pub const TOPIC_LABEL_TEMPLATE: &str = include_str!("../../resources/prompts/topic_label.txt");
pub const NOISE_CLUSTER: i32 = -1;
pub const NOISE_LABEL: &str = "Unclustered";
pub const MAX_LABEL_WORDS: usize = 12;
pub const MAX_EXEMPLARS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicParams {
    #[serde(default = "d_target_dim")]
    pub target_dim: usize,
    #[serde(default = "d_neighbors")]
    pub n_neighbors: usize,
    #[serde(default = "d_min_cluster")]
    pub min_cluster_size: usize,
    #[serde(default)]
    pub min_samples: Option<usize>,
    #[serde(default = "d_min_dist")]
    pub min_dist: f64,
    #[serde(default = "d_spread")]
    pub spread: f64,
    #[serde(default)]
    pub n_epochs: Option<usize>,
    #[serde(default = "d_sample")]
    pub sample_per_cluster: usize,
    /// Also build a topic table for every video.
    #[serde(default)]
    pub per_video: bool,
}

fn d_target_dim() -> usize {
    5
}
fn d_neighbors() -> usize {
    15
}
fn d_min_cluster() -> usize {
    15
}
fn d_min_dist() -> f64 {
    0.1
}
fn d_spread() -> f64 {
    1.0
}
fn d_sample() -> usize {
    30
}

impl Default for TopicParams {
    fn default() -> Self {
        TopicParams {
            target_dim: d_target_dim(),
            n_neighbors: d_neighbors(),
            min_cluster_size: d_min_cluster(),
            min_samples: None,
            min_dist: d_min_dist(),
            spread: d_spread(),
            n_epochs: None,
            sample_per_cluster: d_sample(),
            per_video: false,
        }
    }
}

impl TopicParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::Config { field: format!("topics.{f}"), reason: r.into() });
        if self.target_dim == 0 {
            return bad("target_dim", "must be at least 1");
        }
        if self.n_neighbors < 2 {
            return bad("n_neighbors", "must be at least 2");
        }
        if self.min_cluster_size < 2 {
            return bad("min_cluster_size", "must be at least 2");
        }
        if self.min_samples == Some(0) {
            return bad("min_samples", "must be at least 1");
        }
        if !(self.spread > 0.0) {
            return bad("spread", "must be positive");
        }
        if !(self.min_dist >= 0.0 && self.min_dist < self.spread) {
            return bad("min_dist", "must be in [0, spread)");
        }
        if self.n_epochs == Some(0) {
            return bad("n_epochs", "must be at least 1");
        }
        if self.sample_per_cluster == 0 {
            return bad("sample_per_cluster", "must be at least 1");
        }
        Ok(())
    }

    pub fn umap(&self) -> UmapParams {
        UmapParams {
            target_dim: self.target_dim,
            n_neighbors: self.n_neighbors,
            min_dist: self.min_dist,
            spread: self.spread,
            n_epochs: self.n_epochs,
            ..UmapParams::default()
        }
    }

    pub fn hdbscan(&self) -> HdbscanParams {
        HdbscanParams { min_cluster_size: self.min_cluster_size, min_samples: self.min_samples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub comment_id: String,
    pub cluster_id: i32,
    pub membership_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub cluster_id: i32,
    pub label: String,
    pub member_count: usize,
    pub share_pct: f64,
    pub sentiment_mean: f64,
    pub sentiment_variance: f64,
    pub sentiment_std: f64,
    pub exemplar_comment_ids: Vec<String>,
    /// Set when the LLM could not label the cluster.
    #[serde(default)]
    pub label_fallback: bool,
}

/// Stored topic artifact for one scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub scope: Scope,
    pub total_comments: usize,
    pub table: Vec<TopicCluster>,
    pub assignments: Vec<ClusterAssignment>,
    pub embedding_model_id: String,
    pub label_model_id: String,
    pub reduction_skipped: bool,
}

impl TopicModel {
    pub fn degraded(&self) -> bool {
        self.table.iter().any(|t| t.label_fallback)
    }

    /// Member comment IDs of a cluster, in assignment order.
    pub fn members(&self, cluster_id: i32) -> impl Iterator<Item = &str> {
        self.assignments.iter().filter(move |a| a.cluster_id == cluster_id).map(|a| a.comment_id.as_str())
    }
}

/// Reduce then cluster an embedding matrix. Returns one assignment per row
/// and whether reduction was skipped.
pub fn cluster_embeddings(m: &EmbeddingMatrix, params: &TopicParams, seed: u64) -> Result<(Vec<ClusterAssignment>, bool)> {
    let reduced = umap::reduce(&m.vectors, m.dim, &params.umap(), derive_seed(seed, &["reduce"]))?;
    let coords: Vec<f64> = reduced.coords.iter().map(|&x| x as f64).collect();
    let t0 = std::time::Instant::now();
    let c = hdbscan::hdbscan(&coords, reduced.dim, &params.hdbscan());
    tracing::debug!(elapsed = ?t0.elapsed(), clusters = c.n_clusters, "hdbscan");
    let assignments = m
        .comment_ids
        .iter()
        .zip(c.labels.iter().zip(&c.strengths))
        .map(|(id, (&l, &s))| ClusterAssignment { comment_id: id.clone(), cluster_id: l, membership_strength: s })
        .collect();
    Ok((assignments, reduced.skipped))
}

/// Normalise a model reply into a label of at most [`MAX_LABEL_WORDS`]
/// words. `None` if nothing usable remains.
pub fn clean_label(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Label:")
        .or_else(|| line.strip_prefix("label:"))
        .unwrap_or(line)
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '`')
        .trim_end_matches('.')
        .trim();
    let words: Vec<&str> = line.split_whitespace().take(MAX_LABEL_WORDS).collect();
    (!words.is_empty()).then(|| words.join(" "))
}

/// Ask the LLM for a label per non-noise cluster, each from a seeded random
/// sample of its members. Failures fall back to `Topic {id}`.
pub async fn label_clusters(
    llm: &dyn LanguageModel,
    assignments: &[ClusterAssignment],
    texts: &HashMap<&str, &str>,
    params: &TopicParams,
    template: &str,
    seed: u64,
) -> Vec<(i32, String, bool)> {
    let mut members: std::collections::BTreeMap<i32, Vec<&str>> = Default::default();
    for a in assignments.iter().filter(|a| a.cluster_id != NOISE_CLUSTER) {
        members.entry(a.cluster_id).or_default().push(&a.comment_id);
    }
    let jobs = members.into_iter().map(|(cid, ids)| async move {
        let sample: Vec<&str> = if ids.len() <= params.sample_per_cluster {
            ids.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["label", &cid.to_string()]));
            let mut idx = rand::seq::index::sample(&mut rng, ids.len(), params.sample_per_cluster).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| ids[i]).collect()
        };
        let sample_texts: Vec<&str> = sample.iter().map(|id| texts.get(id).copied().unwrap_or("")).collect();
        let (prompt, _) = render_prompt(template, &sample_texts, 400, 24_000);
        let req = ChatRequest {
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            seed: Some(seed),
            json_response: false,
        };
        match llm.complete(&req).await {
            Ok(raw) => match clean_label(&raw) {
                Some(l) => (cid, l, false),
                None => {
                    tracing::warn!(cluster = cid, "empty topic label; using fallback");
                    (cid, format!("Topic {cid}"), true)
                }
            },
            Err(e) => {
                tracing::warn!(cluster = cid, error = %e, "topic labelling failed; using fallback");
                (cid, format!("Topic {cid}"), true)
            }
        }
    });
    join_all(jobs).await
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Topic table rows (noise included as "Unclustered"), ordered by share
/// descending then cluster id.
pub fn topic_table(
    assignments: &[ClusterAssignment],
    labels: &[(i32, String, bool)],
    scalars: &HashMap<&str, f64>,
) -> Vec<TopicCluster> {
    let total = assignments.len();
    let mut groups: std::collections::BTreeMap<i32, Vec<&ClusterAssignment>> = Default::default();
    groups.entry(NOISE_CLUSTER).or_default();
    for a in assignments {
        groups.entry(a.cluster_id).or_default().push(a);
    }
    let label_of: HashMap<i32, (&str, bool)> = labels.iter().map(|(c, l, f)| (*c, (l.as_str(), *f))).collect();
    let mut rows: Vec<TopicCluster> = groups
        .into_iter()
        .map(|(cid, mut members)| {
            let vals: Vec<f64> = members.iter().filter_map(|a| scalars.get(a.comment_id.as_str()).copied()).collect();
            let (mean, var) = mean_var(&vals);
            members.sort_by(|a, b| {
                b.membership_strength.total_cmp(&a.membership_strength).then_with(|| a.comment_id.cmp(&b.comment_id))
            });
            let (label, fallback) = if cid == NOISE_CLUSTER {
                (NOISE_LABEL.to_string(), false)
            } else {
                label_of.get(&cid).map_or((format!("Topic {cid}"), true), |(l, f)| (l.to_string(), *f))
            };
            TopicCluster {
                cluster_id: cid,
                label,
                member_count: members.len(),
                share_pct: if total == 0 { 0.0 } else { 100.0 * members.len() as f64 / total as f64 },
                sentiment_mean: mean,
                sentiment_variance: var,
                sentiment_std: var.sqrt(),
                exemplar_comment_ids: members.iter().take(MAX_EXEMPLARS).map(|a| a.comment_id.clone()).collect(),
                label_fallback: fallback,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.share_pct.total_cmp(&a.share_pct).then(a.cluster_id.cmp(&b.cluster_id)));
    rows
}

/// The whole topic stage for one scope.
#[allow(clippy::too_many_arguments)]
pub async fn discover_topics(
    scope: Scope,
    comments: &[CommentRecord],
    scalars: &HashMap<&str, f64>,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
    params: &TopicParams,
    template: &str,
    seed: u64,
) -> Result<TopicModel> {
    if comments.is_empty() {
        return Err(Error::EmptyScope(scope.to_string()));
    }
    let items: Vec<(&str, &str)> = comments.iter().map(|c| (c.comment_id.as_str(), c.text.as_str())).collect();
    let matrix = embed_comments(embedder, &items).await?;
    let (assignments, skipped) = if matrix.len() < 2 {
        let a = matrix
            .comment_ids
            .iter()
            .map(|id| ClusterAssignment { comment_id: id.clone(), cluster_id: NOISE_CLUSTER, membership_strength: 0.0 })
            .collect();
        (a, true)
    } else {
        cluster_embeddings(&matrix, params, derive_seed(seed, &["topics", scope.as_id()]))?
    };
    let texts: HashMap<&str, &str> = items.iter().copied().collect();
    let labels = label_clusters(llm, &assignments, &texts, params, template, seed).await;
    let table = topic_table(&assignments, &labels, scalars);
    Ok(TopicModel {
        scope,
        total_comments: assignments.len(),
        table,
        assignments,
        embedding_model_id: matrix.model_id,
        label_model_id: llm.model_id().to_string(),
        reduction_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubLlm;

    fn assign(id: &str, c: i32, s: f64) -> ClusterAssignment {
        ClusterAssignment { comment_id: id.into(), cluster_id: c, membership_strength: s }
    }

    #[test]
    fn params_validate() {
        assert!(TopicParams::default().validate().is_ok());
        let p = TopicParams { min_cluster_size: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = TopicParams { min_dist: 2.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn clean_label_rules() {
        assert_eq!(clean_label("  \n\"Water rights.\"\n").as_deref(), Some("Water rights"));
        assert_eq!(clean_label("Label: Farm policy").as_deref(), Some("Farm policy"));
        assert_eq!(clean_label("   "), None);
        let long = (0..20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(clean_label(&long).unwrap().split(' ').count(), 12);
    }

    #[test]
    fn table_shares_variance_exemplars() {
        let mut a = Vec::new();
        for i in 0..300 {
            a.push(assign(&format!("a{i:04}"), 0, 1.0 - i as f64 / 1000.0));
        }
        for i in 0..1200 {
            a.push(assign(&format!("n{i:04}"), NOISE_CLUSTER, 0.0));
        }
        let mut scalars: HashMap<&str, f64> = HashMap::new();
        let ids: Vec<String> = a.iter().map(|x| x.comment_id.clone()).collect();
        for id in &ids {
            scalars.insert(id.as_str(), 0.5);
        }
        let t = topic_table(&a, &[(0, "Farms".into(), false)], &scalars);
        assert_eq!(t[0].cluster_id, NOISE_CLUSTER);
        assert_eq!(t[0].label, NOISE_LABEL);
        assert_eq!(t[1].share_pct, 20.0);
        assert_eq!(t[1].sentiment_variance, 0.0);
        assert_eq!(t[1].exemplar_comment_ids.len(), 10);
        assert_eq!(t[1].exemplar_comment_ids[0], "a0000");
        let sum: f64 = t.iter().map(|r| r.share_pct).sum();
        assert!((sum - 100.0).abs() < 1e-6);
    }

    #[test]
    fn exemplar_ties_break_by_id() {
        let a = vec![assign("c", 0, 1.0), assign("a", 0, 1.0), assign("b", 0, 0.5)];
        let t = topic_table(&a, &[], &HashMap::new());
        assert_eq!(t[0].exemplar_comment_ids, vec!["a", "c", "b"]);
        assert!(t[0].label_fallback);
    }

    #[tokio::test]
    async fn labels_canned_empty_and_noise() {
        let a = vec![
            assign("x1", 0, 1.0),
            assign("x2", 0, 1.0),
            assign("y1", 1, 1.0),
            assign("z1", 3, 1.0),
            assign("n1", NOISE_CLUSTER, 0.0),
        ];
        let texts: HashMap<&str, &str> =
            [("x1", "a"), ("x2", "b"), ("y1", "c"), ("z1", "d"), ("n1", "e")].into_iter().collect();
        let llm = StubLlm::canned(vec!["Rivers".into(), "Dams".into(), "".into()]);
        let labels = label_clusters(&llm, &a, &texts, &TopicParams::default(), TOPIC_LABEL_TEMPLATE, 1).await;
        assert_eq!(llm.calls(), 3);
        assert_eq!(labels[0], (0, "Rivers".into(), false));
        assert_eq!(labels[1], (1, "Dams".into(), false));
        assert_eq!(labels[2], (3, "Topic 3".into(), true));
    }
}
