//! LLM themes and content suggestions over a random comment sample, with
//! every cited excerpt resolved back to a stored comment.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::llm::{ChatMessage, ChatRequest, LanguageModel, LlmError};
use crate::model::{CommentRecord, Scope};
use crate::text::{collapse_whitespace, head_chars};

pub const THEMES_TEMPLATE: &str = include_str!("../resources/prompts/themes.txt");
pub const SUGGESTIONS_TEMPLATE: &str = include_str!("../resources/prompts/suggestions.txt");

const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Reply with only a JSON object of the form \
{\"items\": [{\"title\": \"...\", \"description\": \"...\", \"cited_excerpts\": [\"...\"]}]} and nothing else.";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThemeParams {
    #[serde(default = "d_sample")]
    pub sample_size: usize,
    #[serde(default = "d_fuzzy")]
    pub fuzzy_threshold: f64,
    /// Excerpts shorter than this (in characters) only match exactly.
    #[serde(default = "d_min_fuzzy")]
    pub min_fuzzy_len: usize,
    #[serde(default = "d_head")]
    pub comment_head_chars: usize,
    /// Character budget for the rendered comment list.
    #[serde(default = "d_budget")]
    pub max_prompt_chars: usize,
}

fn d_sample() -> usize {
    100
}
fn d_fuzzy() -> f64 {
    0.8
}
fn d_min_fuzzy() -> usize {
    15
}
fn d_head() -> usize {
    400
}
fn d_budget() -> usize {
    48_000
}

impl Default for ThemeParams {
    fn default() -> Self {
        ThemeParams {
            sample_size: d_sample(),
            fuzzy_threshold: d_fuzzy(),
            min_fuzzy_len: d_min_fuzzy(),
            comment_head_chars: d_head(),
            max_prompt_chars: d_budget(),
        }
    }
}

impl ThemeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::Config { field: format!("themes.{f}"), reason: r.into() });
        if self.sample_size == 0 {
            return bad("sample_size", "must be at least 1");
        }
        if !(self.fuzzy_threshold > 0.0 && self.fuzzy_threshold <= 1.0) {
            return bad("fuzzy_threshold", "must be in (0, 1]");
        }
        if self.comment_head_chars == 0 {
            return bad("comment_head_chars", "must be at least 1");
        }
        if self.max_prompt_chars == 0 {
            return bad("max_prompt_chars", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Themes,
    Suggestions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentSample {
    pub scope: Scope,
    pub comment_ids: Vec<String>,
    pub sample_size_requested: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Exact,
    Fuzzy,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationMatch {
    pub excerpt: String,
    pub matched_comment_id: Option<String>,
    pub similarity: f64,
    pub status: MatchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theme {
    pub title: String,
    pub description: String,
    pub citations: Vec<CitationMatch>,
    pub unmatched_citations: usize,
}

/// Text shown in citation tooltips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedComment {
    pub video_id: String,
    pub author_display: String,
    pub text: String,
    pub published_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeReport {
    pub scope: Scope,
    pub kind: ReportKind,
    pub items: Vec<Theme>,
    pub sample: CommentSample,
    pub model_id: String,
    pub prompt_digest: String,
    /// Collection time of the data the report was generated from.
    pub generated_at: DateTime<Utc>,
    /// Every matched comment, keyed by ID.
    pub cited_comments: BTreeMap<String, CitedComment>,
}

/// Uniform sample without replacement. `comments` must already be in a
/// deterministic order; the sample keeps that order. Populations no larger
/// than `n` are returned whole.
pub fn sample_comments(scope: &Scope, comments: &[CommentRecord], n: usize, seed: u64) -> Result<CommentSample> {
    if comments.is_empty() {
        return Err(Error::EmptyScope(scope.to_string()));
    }
    let ids = if comments.len() <= n {
        comments.iter().map(|c| c.comment_id.clone()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["sample", scope.as_id()]));
        let mut idx = rand::seq::index::sample(&mut rng, comments.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| comments[i].comment_id.clone()).collect()
    };
    Ok(CommentSample { scope: scope.clone(), comment_ids: ids, sample_size_requested: n, seed })
}

/// Substitute `{{org_name}}` in a template.
pub fn substitute_org(template: &str, org_name: &str) -> String {
    template.replace("{{org_name}}", org_name)
}

/// Render the numbered comment list into `template`, keeping the list under
/// `max_chars`: first every comment is cut to `head_chars`, then trailing
/// comments are dropped. Returns the prompt and the number dropped.
pub fn render_prompt(template: &str, texts: &[&str], head: usize, max_chars: usize) -> (String, usize) {
    let full: Vec<String> = texts.iter().map(|t| collapse_whitespace(t)).collect();
    let list_len = |v: &[String]| v.iter().enumerate().map(|(i, t)| t.len() + format!("[{}] \n", i + 1).len()).sum::<usize>();
    let mut lines = full;
    if list_len(&lines) > max_chars {
        lines = lines.iter().map(|t| head_chars(t, head).to_string()).collect();
    }
    let mut dropped = 0;
    while lines.len() > 1 && list_len(&lines) > max_chars {
        lines.pop();
        dropped += 1;
    }
    if dropped > 0 {
        tracing::warn!(dropped, "comment list over prompt budget; dropped trailing comments");
    }
    let list: String = lines
        .iter()
        .enumerate()
        .map(|(i, t)| format!("[{}] {}\n", i + 1, t))
        .collect();
    let prompt = template
        .replace("{{count}}", &lines.len().to_string())
        .replace("{{comments}}", list.trim_end());
    (prompt, dropped)
}

#[derive(Debug, Deserialize)]
struct RawItem {
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default, alias = "citations", alias = "examples")]
    cited_excerpts: Vec<String>,
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

/// Parse the structured reply: `{"items": [...]}` (also `themes` or
/// `suggestions` as the key) or a bare array of items.
fn parse_items(raw: &str) -> std::result::Result<Vec<RawItem>, String> {
    let body = strip_fences(raw);
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let arr = match v {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(mut o) => ["items", "themes", "suggestions"]
            .iter()
            .find_map(|k| o.remove(*k))
            .and_then(|v| match v {
                serde_json::Value::Array(a) => Some(a),
                _ => None,
            })
            .ok_or("missing `items` array")?,
        _ => return Err("expected an object or array".into()),
    };
    let items: Vec<RawItem> = arr
        .into_iter()
        .map(serde_json::from_value)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if items.iter().any(|i| i.title.trim().is_empty()) {
        return Err("item with empty title".into());
    }
    Ok(items)
}

/// Lowercase, collapse whitespace, and strip surrounding quotes and
/// ellipses.
pub fn normalize_excerpt(s: &str) -> String {
    let mut t = collapse_whitespace(&s.to_lowercase());
    loop {
        let before = t.len();
        for q in ["\"", "'", "\u{201c}", "\u{201d}", "\u{2018}", "\u{2019}", "\u{ab}", "\u{bb}", "\u{2026}", "..."] {
            while let Some(r) = t.strip_prefix(q) {
                t = r.to_string();
            }
            while let Some(r) = t.strip_suffix(q) {
                t = r.to_string();
            }
        }
        t = t.trim().to_string();
        if t.len() == before {
            return t;
        }
    }
}

pub fn normalize_comment(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

/// Minimum edit distance between `pattern` and any substring of `text`.
pub fn substring_edit_distance(pattern: &[char], text: &[char]) -> usize {
    let m = pattern.len();
    if m == 0 {
        return 0;
    }
    // prev[i] = distance of pattern[..i] against the best substring ending here.
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    let mut best = prev[m];
    for &tc in text {
        cur[0] = 0;
        for i in 1..=m {
            let sub = prev[i - 1] + usize::from(pattern[i - 1] != tc);
            cur[i] = sub.min(prev[i] + 1).min(cur[i - 1] + 1);
        }
        best = best.min(cur[m]);
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// A candidate comment prepared for matching.
pub struct Candidate<'a> {
    pub comment_id: &'a str,
    normalized: String,
    chars: Vec<char>,
}

impl<'a> Candidate<'a> {
    pub fn new(comment: &'a CommentRecord) -> Self {
        let normalized = normalize_comment(&comment.text);
        let chars = normalized.chars().collect();
        Candidate { comment_id: &comment.comment_id, normalized, chars }
    }
}

pub fn prepare_candidates<'a, I: IntoIterator<Item = &'a CommentRecord>>(comments: I) -> Vec<Candidate<'a>> {
    comments.into_iter().map(Candidate::new).collect()
}

/// Resolve an excerpt against candidates: exact (normalized substring),
/// else the best fuzzy match at or above `threshold`, else unmatched.
/// The first candidate wins ties.
pub fn ground_citation(excerpt: &str, candidates: &[Candidate<'_>], params: &ThemeParams) -> CitationMatch {
    let norm = normalize_excerpt(excerpt);
    let unmatched = |similarity: f64| CitationMatch {
        excerpt: excerpt.to_string(),
        matched_comment_id: None,
        similarity,
        status: MatchStatus::Unmatched,
    };
    if norm.is_empty() {
        return unmatched(0.0);
    }
    if let Some(c) = candidates.iter().find(|c| c.normalized.contains(&norm)) {
        return CitationMatch {
            excerpt: excerpt.to_string(),
            matched_comment_id: Some(c.comment_id.to_string()),
            similarity: 1.0,
            status: MatchStatus::Exact,
        };
    }
    let pattern: Vec<char> = norm.chars().collect();
    if pattern.len() < params.min_fuzzy_len {
        return unmatched(0.0);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = substring_edit_distance(&pattern, &c.chars);
        let sim = (1.0 - d as f64 / pattern.len() as f64).max(0.0);
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((i, sim));
        }
    }
    match best {
        Some((i, sim)) if sim >= params.fuzzy_threshold => CitationMatch {
            excerpt: excerpt.to_string(),
            matched_comment_id: Some(candidates[i].comment_id.to_string()),
            similarity: sim,
            status: MatchStatus::Fuzzy,
        },
        Some((_, sim)) => unmatched(sim),
        None => unmatched(0.0),
    }
}

const FALLBACK_FUZZY_POOL: usize = 64;

/// Ground against the sample first; when that fails, try the whole scope
/// (exact match over all comments, fuzzy over the comments sharing the most
/// character trigrams with the excerpt).
pub fn ground_with_fallback(
    excerpt: &str,
    sample: &[Candidate<'_>],
    scope: &[Candidate<'_>],
    params: &ThemeParams,
) -> CitationMatch {
    let first = ground_citation(excerpt, sample, params);
    if first.status != MatchStatus::Unmatched || scope.is_empty() {
        return first;
    }
    let norm = normalize_excerpt(excerpt);
    if norm.is_empty() {
        return first;
    }
    if let Some(c) = scope.iter().find(|c| c.normalized.contains(&norm)) {
        return CitationMatch {
            excerpt: excerpt.to_string(),
            matched_comment_id: Some(c.comment_id.to_string()),
            similarity: 1.0,
            status: MatchStatus::Exact,
        };
    }
    let chars: Vec<char> = norm.chars().collect();
    if chars.len() < params.min_fuzzy_len {
        return first;
    }
    let trigrams: Vec<String> = chars.windows(3).map(|w| w.iter().collect()).collect();
    let mut scored: Vec<(usize, usize)> = scope
        .iter()
        .enumerate()
        .map(|(i, c)| (trigrams.iter().filter(|t| c.normalized.contains(t.as_str())).count(), i))
        .filter(|(n, _)| *n > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(FALLBACK_FUZZY_POOL);
    scored.sort_by_key(|(_, i)| *i);
    let pool: Vec<Candidate<'_>> = scored
        .iter()
        .map(|(_, i)| Candidate {
            comment_id: scope[*i].comment_id,
            normalized: scope[*i].normalized.clone(),
            chars: scope[*i].chars.clone(),
        })
        .collect();
    let second = ground_citation(excerpt, &pool, params);
    if second.status != MatchStatus::Unmatched {
        second
    } else {
        first
    }
}

/// Everything needed to produce one report.
pub struct ReportRequest<'a> {
    pub kind: ReportKind,
    pub sample: &'a CommentSample,
    /// Comments of the whole scope, used to resolve the sample and as the
    /// grounding fallback.
    pub scope_comments: &'a [CommentRecord],
    pub template: &'a str,
    pub org_name: &'a str,
    pub params: &'a ThemeParams,
    pub seed: u64,
    pub as_of: DateTime<Utc>,
}

pub fn prompt_digest(kind: ReportKind, template: &str, org_name: &str) -> String {
    let rendered = match kind {
        ReportKind::Themes => template.to_string(),
        ReportKind::Suggestions => substitute_org(template, org_name),
    };
    sha256_hex(rendered.as_bytes())
}

/// Ask the model for themes or suggestions and ground every citation.
/// A reply that cannot be parsed gets one re-ask with a format reminder.
pub async fn generate_report(llm: &dyn LanguageModel, req: ReportRequest<'_>) -> Result<ThemeReport> {
    let by_id: std::collections::HashMap<&str, &CommentRecord> =
        req.scope_comments.iter().map(|c| (c.comment_id.as_str(), c)).collect();
    let sampled: Vec<&CommentRecord> = req
        .sample
        .comment_ids
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("sampled comment {id} not in scope {}", req.sample.scope))
            })
        })
        .collect::<Result<_>>()?;

    let template = match req.kind {
        ReportKind::Themes => req.template.to_string(),
        ReportKind::Suggestions => substitute_org(req.template, req.org_name),
    };
    let texts: Vec<&str> = sampled.iter().map(|c| c.text.as_str()).collect();
    let (prompt, _dropped) =
        render_prompt(&template, &texts, req.params.comment_head_chars, req.params.max_prompt_chars);

    let mut messages = vec![ChatMessage::user(prompt)];
    let mut attempts = 0;
    let items = loop {
        let request = ChatRequest {
            messages: messages.clone(),
            temperature: 0.0,
            seed: Some(req.seed),
            json_response: true,
        };
        let raw = llm.complete(&request).await?;
        match parse_items(&raw) {
            Ok(items) => break items,
            Err(reason) => {
                attempts += 1;
                if attempts >= 2 {
                    return Err(LlmError::Malformed(format!(
                        "{} for {}: {reason}",
                        match req.kind {
                            ReportKind::Themes => "themes",
                            ReportKind::Suggestions => "suggestions",
                        },
                        req.sample.scope
                    ))
                    .into());
                }
                messages.push(ChatMessage::assistant(raw));
                messages.push(ChatMessage::user(FORMAT_REMINDER));
            }
        }
    };

    let sample_cands = prepare_candidates(sampled.iter().copied());
    let scope_cands = prepare_candidates(req.scope_comments.iter());
    let mut cited = BTreeMap::new();
    let themes = items
        .into_iter()
        .map(|it| {
            let citations: Vec<CitationMatch> = it
                .cited_excerpts
                .iter()
                .map(|e| ground_with_fallback(e, &sample_cands, &scope_cands, req.params))
                .collect();
            for c in &citations {
                if let Some(id) = &c.matched_comment_id {
                    let rec = by_id[id.as_str()];
                    cited.insert(
                        id.clone(),
                        CitedComment {
                            video_id: rec.video_id.clone(),
                            author_display: rec.author_display.clone(),
                            text: rec.text.clone(),
                            published_at: rec.published_at,
                        },
                    );
                }
            }
            Theme {
                title: it.title.trim().to_string(),
                description: it.description.trim().to_string(),
                unmatched_citations: citations.iter().filter(|c| c.status == MatchStatus::Unmatched).count(),
                citations,
            }
        })
        .collect();

    Ok(ThemeReport {
        scope: req.sample.scope.clone(),
        kind: req.kind,
        items: themes,
        sample: req.sample.clone(),
        model_id: llm.model_id().to_string(),
        prompt_digest: prompt_digest(req.kind, req.template, req.org_name),
        generated_at: req.as_of,
        cited_comments: cited,
    })
}
