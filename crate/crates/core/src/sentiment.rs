//! Three-class comment sentiment: classifier plugins, the scalar mapping,
//! and scope-level aggregation.

use std::collections::{BTreeMap, HashSet};

use async_trait::async_trait;
use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CommentRecord;
use crate::text;

pub const TRIPLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentTriple {
    pub p_neg: f64,
    pub p_neu: f64,
    pub p_pos: f64,
}

impl SentimentTriple {
    pub const NEGATIVE: SentimentTriple = SentimentTriple { p_neg: 1.0, p_neu: 0.0, p_pos: 0.0 };
    pub const NEUTRAL: SentimentTriple = SentimentTriple { p_neg: 0.0, p_neu: 1.0, p_pos: 0.0 };
    pub const POSITIVE: SentimentTriple = SentimentTriple { p_neg: 0.0, p_neu: 0.0, p_pos: 1.0 };

    pub fn new(p_neg: f64, p_neu: f64, p_pos: f64) -> Result<Self> {
        let t = SentimentTriple { p_neg, p_neu, p_pos };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_neg, self.p_neu, self.p_pos];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("probability out of [0,1]: {self:?}")));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > TRIPLE_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities do not sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// Signed scalar in [-1, 1]: positive mass minus negative mass.
    pub fn to_scalar(&self) -> f64 {
        (self.p_pos - self.p_neg).clamp(-1.0, 1.0)
    }
}

pub fn to_scalar(triple: &SentimentTriple) -> f64 {
    triple.to_scalar()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredComment {
    pub comment_id: String,
    pub triple: SentimentTriple,
    pub scalar: f64,
    pub model_id: String,
}

/// Classifier plugin: (model_id, texts) -> one triple per text, in order.
#[async_trait]
pub trait SentimentModel: Send + Sync {
    fn model_id(&self) -> &str;

    fn max_batch(&self) -> usize {
        256
    }

    async fn classify_batch(&self, texts: &[String]) -> Result<Vec<SentimentTriple>>;
}

#[derive(Debug, Clone, Deserialize)]
struct LexiconFile {
    version: String,
    positive: Vec<String>,
    negative: Vec<String>,
}

/// Deterministic stand-in classifier: one-hot on the sign of
/// (positive word count - negative word count), neutral on ties.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    model_id: String,
    positive: HashSet<String>,
    negative: HashSet<String>,
}

pub const LEXICON_MODEL_PREFIX: &str = "stub-lexicon";

impl LexiconClassifier {
    pub fn from_json(json: &str) -> Result<Self> {
        let f: LexiconFile = serde_json::from_str(json)?;
        Ok(LexiconClassifier {
            model_id: format!("{LEXICON_MODEL_PREFIX}-v{}", f.version),
            positive: f.positive.into_iter().map(|w| w.to_lowercase()).collect(),
            negative: f.negative.into_iter().map(|w| w.to_lowercase()).collect(),
        })
    }

    pub fn bundled() -> Self {
        Self::from_json(include_str!("../resources/sentiment_lexicon.json"))
            .expect("bundled lexicon parses")
    }

    pub fn classify(&self, text: &str) -> SentimentTriple {
        let mut score: i64 = 0;
        for w in text::words(text) {
            if self.positive.contains(&w) {
                score += 1;
            } else if self.negative.contains(&w) {
                score -= 1;
            }
        }
        match score.signum() {
            1 => SentimentTriple::POSITIVE,
            -1 => SentimentTriple::NEGATIVE,
            _ => SentimentTriple::NEUTRAL,
        }
    }
}

#[async_trait]
impl SentimentModel for LexiconClassifier {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn classify_batch(&self, texts: &[String]) -> Result<Vec<SentimentTriple>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::InvalidArgument("empty text in sentiment batch".into()));
        }
        Ok(texts.iter().map(|t| self.classify(t)).collect())
    }
}

/// Classifier served over HTTP. The endpoint receives
/// `{"model": id, "inputs": [text, ...]}` and answers
/// `{"scores": [[p_neg, p_neu, p_pos], ...]}`.
pub struct HttpSentimentModel {
    model_id: String,
    endpoint: String,
    client: reqwest::Client,
    max_batch: usize,
}

impl HttpSentimentModel {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>, max_batch: usize) -> Self {
        HttpSentimentModel {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            client: reqwest::Client::new(),
            max_batch,
        }
    }
}

#[derive(Serialize)]
struct PluginRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct SentimentResponse {
    scores: Vec<[f64; 3]>,
}

#[async_trait]
impl SentimentModel for HttpSentimentModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    async fn classify_batch(&self, texts: &[String]) -> Result<Vec<SentimentTriple>> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&PluginRequest { model: &self.model_id, inputs: texts })
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::ModelUnavailable(format!("{}: {e}", self.model_id)))?;
        let body: SentimentResponse = resp
            .json()
            .await
            .map_err(|e| Error::ModelUnavailable(format!("{}: {e}", self.model_id)))?;
        if body.scores.len() != texts.len() {
            return Err(Error::ModelUnavailable(format!(
                "{} returned {} scores for {} inputs",
                self.model_id,
                body.scores.len(),
                texts.len()
            )));
        }
        body.scores.into_iter().map(|[n, u, p]| SentimentTriple::new(n, u, p)).collect()
    }
}

/// Score comments in batches, head-truncating each text to `max_tokens`
/// whitespace tokens before classification.
pub async fn score_comments(
    model: &dyn SentimentModel,
    comments: &[CommentRecord],
    batch_size: usize,
    max_tokens: usize,
) -> Result<Vec<ScoredComment>> {
    let batch_size = batch_size.clamp(1, model.max_batch().max(1));
    let mut out = Vec::with_capacity(comments.len());
    for chunk in comments.chunks(batch_size) {
        let texts: Vec<String> =
            chunk.iter().map(|c| text::head_tokens(&c.text, max_tokens).to_string()).collect();
        let triples = model.classify_batch(&texts).await?;
        if triples.len() != chunk.len() {
            return Err(Error::ModelUnavailable(format!(
                "{} returned {} triples for {} texts",
                model.model_id(),
                triples.len(),
                chunk.len()
            )));
        }
        for (c, t) in chunk.iter().zip(triples) {
            t.validate()?;
            out.push(ScoredComment {
                comment_id: c.comment_id.clone(),
                scalar: t.to_scalar(),
                triple: t,
                model_id: model.model_id().to_string(),
            });
        }
    }
    Ok(out)
}

/// Arithmetic mean; `None` for an empty input.
pub fn mean_sentiment<I: IntoIterator<Item = f64>>(scalars: I) -> Option<f64> {
    let (sum, n) = scalars.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySentiment {
    /// First day of the calendar month (UTC).
    pub month: NaiveDate,
    pub mean_scalar: f64,
    pub comment_count: u64,
}

pub fn month_start(t: &DateTime<Utc>) -> NaiveDate {
    NaiveDate::from_ymd_opt(t.year(), t.month(), 1).expect("first of month is valid")
}

/// Per-month mean scalar for `(published_at, scalar)` pairs, chronological,
/// omitting months without comments.
pub fn monthly_sentiment_series<I>(points: I) -> Vec<MonthlySentiment>
where
    I: IntoIterator<Item = (DateTime<Utc>, f64)>,
{
    let mut by_month: BTreeMap<NaiveDate, (f64, u64)> = BTreeMap::new();
    for (t, s) in points {
        let e = by_month.entry(month_start(&t)).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    by_month
        .into_iter()
        .map(|(month, (sum, n))| MonthlySentiment {
            month,
            mean_scalar: sum / n as f64,
            comment_count: n,
        })
        .collect()
}
