use std::collections::HashMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::canonical::fnv1a64;
use crate::error::{Error, Result};
use crate::text::{words, Stopwords};

/// Row-major N x D matrix of comment embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub comment_ids: Vec<String>,
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub model_id: String,
    pub normalized: bool,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.comment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comment_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Sentence-embedding plugin.
#[async_trait]
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn max_batch(&self) -> usize {
        256
    }
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

pub const HASHING_EMBEDDER_ID: &str = "stub-hashing-v1";
pub const HASHING_DIM: usize = 32;

/// Deterministic stand-in for a sentence encoder: signed feature hashing of
/// content words into `dim` buckets.
pub struct HashingEmbedder {
    dim: usize,
    stopwords: Stopwords,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: HASHING_DIM, stopwords: Stopwords::english() }
    }
}

impl HashingEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        HashingEmbedder { dim: dim.max(1), ..Default::default() }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let mut any = false;
        for w in words(text) {
            if w.chars().count() < 2 || self.stopwords.contains(&w) {
                continue;
            }
            let h = fnv1a64(w.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
            any = true;
        }
        if !any {
            let h = fnv1a64(text.trim().to_lowercase().as_bytes());
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        l2_normalize(&mut v);
        v
    }
}

#[async_trait]
impl Embedder for HashingEmbedder {
    fn model_id(&self) -> &str {
        HASHING_EMBEDDER_ID
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embedding service speaking `{"model", "inputs"}` -> `{"embeddings"}`.
pub struct HttpEmbedder {
    model_id: String,
    endpoint: String,
    client: reqwest::Client,
}

impl HttpEmbedder {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        HttpEmbedder { model_id: model_id.into(), endpoint: endpoint.into(), client: reqwest::Client::new() }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let unavailable = |e: String| Error::ModelUnavailable(format!("{}: {e}", self.model_id));
        let body: EmbedResponse = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { model: &self.model_id, inputs: texts })
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| unavailable(e.to_string()))?
            .json()
            .await
            .map_err(|e| unavailable(e.to_string()))?;
        if body.embeddings.len() != texts.len() {
            return Err(unavailable(format!(
                "returned {} rows for {} inputs",
                body.embeddings.len(),
                texts.len()
            )));
        }
        Ok(body.embeddings)
    }
}

pub fn l2_normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// Embed `(comment_id, text)` pairs. Identical texts are sent to the model
/// once; rows come back L2-normalized in input order.
pub async fn embed_comments(embedder: &dyn Embedder, items: &[(&str, &str)]) -> Result<EmbeddingMatrix> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no comments to embed".into()));
    }
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut unique: Vec<String> = Vec::new();
    let rows: Vec<usize> = items
        .iter()
        .map(|(_, t)| {
            *slot.entry(*t).or_insert_with(|| {
                unique.push(t.to_string());
                unique.len() - 1
            })
        })
        .collect();

    let mut vecs: Vec<Vec<f32>> = Vec::with_capacity(unique.len());
    for chunk in unique.chunks(embedder.max_batch().max(1)) {
        let out = embedder.embed(chunk).await?;
        if out.len() != chunk.len() {
            return Err(Error::ModelUnavailable(format!(
                "{} returned {} rows for {} texts",
                embedder.model_id(),
                out.len(),
                chunk.len()
            )));
        }
        vecs.extend(out);
    }
    let dim = vecs[0].len();
    if dim == 0 || vecs.iter().any(|v| v.len() != dim) {
        return Err(Error::ModelUnavailable(format!("{} returned ragged rows", embedder.model_id())));
    }
    for v in &mut vecs {
        l2_normalize(v);
    }
    let mut flat = Vec::with_capacity(items.len() * dim);
    for r in rows {
        flat.extend_from_slice(&vecs[r]);
    }
    Ok(EmbeddingMatrix {
        comment_ids: items.iter().map(|(id, _)| id.to_string()).collect(),
        dim,
        vectors: flat,
        model_id: embedder.model_id().to_string(),
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: HashingEmbedder,
        seen: AtomicUsize,
    }

    #[async_trait]
    impl Embedder for Counting {
        fn model_id(&self) -> &str {
            "counting"
        }
        async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
            self.seen.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts).await
        }
    }

    #[tokio::test]
    async fn stub_rows_are_unit_and_deterministic() {
        let e = HashingEmbedder::default();
        let items = [("a", "The water crisis is real"), ("b", "the WATER crisis is real"), ("c", "ok"), ("d", "")];
        let m = embed_comments(&e, &items).await.unwrap();
        assert_eq!((m.len(), m.dim), (4, 32));
        assert_eq!(m.row(0), m.row(1));
        for i in 0..4 {
            let n: f64 = m.row(i).iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[tokio::test]
    async fn duplicate_texts_embedded_once() {
        let e = Counting { inner: HashingEmbedder::default(), seen: AtomicUsize::new(0) };
        let items = [("a", "same text"), ("b", "same text"), ("c", "other text"), ("d", "same text")];
        let m = embed_comments(&e, &items).await.unwrap();
        assert_eq!(e.seen.load(Ordering::SeqCst), 2);
        assert_eq!(m.comment_ids, vec!["a", "b", "c", "d"]);
        assert_eq!(m.row(0), m.row(3));
    }
}
