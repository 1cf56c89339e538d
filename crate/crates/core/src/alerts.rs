//! Per-video change alerts: comment volume against an exponential-smoothing
//! baseline, sentiment against a monthly weighted average, and
//! update-request counts against a zero baseline.

use std::collections::HashMap;

use chrono::{DateTime, Months, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{bucket_counts, bucket_start, Bucket, HistogramBucket};
use crate::error::{Error, Result};
use crate::model::CommentRecord;
use crate::sentiment::{monthly_sentiment_series, MonthlySentiment};
use crate::text::collapse_whitespace;

const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertWindow {
    Week,
    Month,
}

impl AlertWindow {
    pub fn bucket(self) -> Bucket {
        match self {
            AlertWindow::Week => Bucket::Week,
            AlertWindow::Month => Bucket::Month,
        }
    }
}

/// How prior months are weighted in the sentiment baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentWeighting {
    /// Weight each month by its comment count.
    CommentCount,
    /// Comment count times an exponential decay in the month's age.
    Recency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertConfig {
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_high")]
    pub volume_high_ratio: f64,
    #[serde(default = "d_low")]
    pub volume_low_ratio: f64,
    #[serde(default = "d_min_baseline")]
    pub volume_min_baseline: f64,
    #[serde(default = "d_tau")]
    pub sentiment_delta_threshold: f64,
    #[serde(default = "d_min_comments")]
    pub sentiment_min_comments: u64,
    #[serde(default = "d_umin")]
    pub update_request_min: u64,
    #[serde(default = "d_window")]
    pub window: AlertWindow,
    #[serde(default = "d_weighting")]
    pub sentiment_weighting: SentimentWeighting,
    #[serde(default = "d_half_life")]
    pub recency_half_life_months: f64,
}

fn d_alpha() -> f64 {
    0.3
}
fn d_high() -> f64 {
    3.0
}
fn d_low() -> f64 {
    1.0 / 3.0
}
fn d_min_baseline() -> f64 {
    2.0
}
fn d_tau() -> f64 {
    0.3
}
fn d_min_comments() -> u64 {
    20
}
fn d_umin() -> u64 {
    5
}
fn d_window() -> AlertWindow {
    AlertWindow::Week
}
fn d_weighting() -> SentimentWeighting {
    SentimentWeighting::CommentCount
}
fn d_half_life() -> f64 {
    6.0
}

impl Default for AlertConfig {
    fn default() -> Self {
        AlertConfig {
            alpha: d_alpha(),
            volume_high_ratio: d_high(),
            volume_low_ratio: d_low(),
            volume_min_baseline: d_min_baseline(),
            sentiment_delta_threshold: d_tau(),
            sentiment_min_comments: d_min_comments(),
            update_request_min: d_umin(),
            window: d_window(),
            sentiment_weighting: d_weighting(),
            recency_half_life_months: d_half_life(),
        }
    }
}

impl AlertConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::Config { field: format!("alerts.{f}"), reason: r.into() });
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must be in (0, 1]");
        }
        if !(self.volume_high_ratio > 1.0) {
            return bad("volume_high_ratio", "must be greater than 1");
        }
        if !(self.volume_low_ratio > 0.0 && self.volume_low_ratio < 1.0) {
            return bad("volume_low_ratio", "must be in (0, 1)");
        }
        if !(self.volume_min_baseline > 0.0) {
            return bad("volume_min_baseline", "must be positive");
        }
        if !(self.sentiment_delta_threshold > 0.0) {
            return bad("sentiment_delta_threshold", "must be positive");
        }
        if self.sentiment_min_comments == 0 {
            return bad("sentiment_min_comments", "must be positive");
        }
        if self.update_request_min == 0 {
            return bad("update_request_min", "must be positive");
        }
        if !(self.recency_half_life_months > 0.0) {
            return bad("recency_half_life_months", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    VolumeHigh,
    VolumeLow,
    SentimentPositive,
    SentimentNegative,
    UpdateRequests,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub video_id: String,
    pub window_start: DateTime<Utc>,
    pub observed: f64,
    pub baseline: f64,
    pub deviation: f64,
    #[serde(default)]
    pub supporting_comment_ids: Vec<String>,
}

/// Simple (level-only) exponential smoothing; returns the final level as the
/// forecast for the next window.
pub fn exp_smoothing_baseline(series: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0, 1]")));
    }
    let (first, rest) = series
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty series".into()))?;
    Ok(rest.iter().fold(*first, |level, x| alpha * x + (1.0 - alpha) * level))
}

/// Volume rule over per-window counts; the last entry is the current window.
pub fn volume_alerts(video_id: &str, windows: &[HistogramBucket], config: &AlertConfig) -> Vec<Alert> {
    let Some((current, history)) = windows.split_last() else {
        return Vec::new();
    };
    if history.is_empty() {
        return Vec::new();
    }
    let hist: Vec<f64> = history.iter().map(|b| b.count as f64).collect();
    let b = exp_smoothing_baseline(&hist, config.alpha).expect("history non-empty, alpha validated");
    let x = current.count as f64;
    let make = |kind| Alert {
        kind,
        video_id: video_id.to_string(),
        window_start: current.bucket_start,
        observed: x,
        baseline: b,
        deviation: x / b.max(EPSILON),
        supporting_comment_ids: Vec::new(),
    };
    let mut out = Vec::new();
    if x > config.volume_high_ratio * b.max(config.volume_min_baseline) {
        out.push(make(AlertKind::VolumeHigh));
    }
    if b >= config.volume_min_baseline && x < config.volume_low_ratio * b {
        out.push(make(AlertKind::VolumeLow));
    }
    out
}

/// Volume alerts for one video, with windows running through the window
/// that contains `reference`.
pub fn detect_volume_alerts(
    video_id: &str,
    comments: &[CommentRecord],
    reference: DateTime<Utc>,
    config: &AlertConfig,
) -> Vec<Alert> {
    let times: Vec<_> = comments.iter().map(|c| c.published_at).collect();
    let windows = bucket_counts(&times, config.window.bucket(), Some(reference));
    volume_alerts(video_id, &windows, config)
}

/// Weighted average of prior monthly means; `None` when there are no prior
/// months. `latest` is the month used as age zero for recency weighting.
pub fn weighted_sentiment_baseline(
    prior: &[MonthlySentiment],
    weighting: SentimentWeighting,
    half_life_months: f64,
) -> Option<f64> {
    let latest = prior.iter().map(|m| m.month).max()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for m in prior {
        let mut w = m.comment_count as f64;
        if weighting == SentimentWeighting::Recency {
            let age = months_between(m.month, latest) as f64;
            w *= 0.5f64.powf(age / half_life_months);
        }
        num += w * m.mean_scalar;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

fn months_between(earlier: chrono::NaiveDate, later: chrono::NaiveDate) -> u32 {
    let mut n = 0;
    let mut cur = earlier;
    while cur < later {
        cur = cur + Months::new(1);
        n += 1;
    }
    n
}

/// Count-weighted monthly baseline over comments published before
/// `window_start`.
pub fn monthly_weighted_sentiment_baseline(
    scored: &[(DateTime<Utc>, f64)],
    window_start: DateTime<Utc>,
    config: &AlertConfig,
) -> Option<f64> {
    let prior = monthly_sentiment_series(scored.iter().copied().filter(|(t, _)| *t < window_start));
    weighted_sentiment_baseline(&prior, config.sentiment_weighting, config.recency_half_life_months)
}

/// Sentiment rule for one window, given its scalars and the baseline.
pub fn sentiment_alert(
    video_id: &str,
    window_start: DateTime<Utc>,
    current: &[f64],
    baseline: Option<f64>,
    config: &AlertConfig,
) -> Option<Alert> {
    let baseline = baseline?;
    if (current.len() as u64) < config.sentiment_min_comments {
        return None;
    }
    let mean = current.iter().sum::<f64>() / current.len() as f64;
    let delta = mean - baseline;
    let kind = if delta > config.sentiment_delta_threshold {
        AlertKind::SentimentPositive
    } else if delta < -config.sentiment_delta_threshold {
        AlertKind::SentimentNegative
    } else {
        return None;
    };
    Some(Alert {
        kind,
        video_id: video_id.to_string(),
        window_start,
        observed: mean,
        baseline,
        deviation: delta,
        supporting_comment_ids: Vec::new(),
    })
}

/// Sentiment alert for the window containing `reference`.
pub fn detect_sentiment_alerts(
    video_id: &str,
    comments: &[CommentRecord],
    scalars: &HashMap<String, f64>,
    reference: DateTime<Utc>,
    config: &AlertConfig,
) -> Vec<Alert> {
    let window_start = bucket_start(&reference, config.window.bucket());
    let scored: Vec<(DateTime<Utc>, f64)> = comments
        .iter()
        .filter_map(|c| scalars.get(&c.comment_id).map(|s| (c.published_at, *s)))
        .collect();
    let current: Vec<f64> =
        scored.iter().filter(|(t, _)| *t >= window_start).map(|(_, s)| *s).collect();
    let baseline = monthly_weighted_sentiment_baseline(&scored, window_start, config);
    sentiment_alert(video_id, window_start, &current, baseline, config).into_iter().collect()
}

#[derive(Debug, Clone, Deserialize)]
struct UpdateLexiconFile {
    version: String,
    phrases: Vec<String>,
    request_cues: Vec<String>,
    targets: Vec<String>,
}

/// Pattern matcher for comments asking for an updated or follow-up video.
/// A comment matches if it contains a standalone phrase, or a request cue
/// together with a target term. Matching is case-insensitive on word
/// boundaries.
#[derive(Debug, Clone)]
pub struct UpdateRequestMatcher {
    pub version: String,
    phrases: Vec<String>,
    cues: Vec<String>,
    targets: Vec<String>,
}

fn contains_phrase(hay: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric();
    let mut start = 0;
    while let Some(pos) = hay[start..].find(needle) {
        let i = start + pos;
        let j = i + needle.len();
        let before_ok = hay[..i].chars().next_back().is_none_or(|c| !is_word(c));
        let after_ok = hay[j..].chars().next().is_none_or(|c| !is_word(c));
        if before_ok && after_ok {
            return true;
        }
        start = i + hay[i..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

impl UpdateRequestMatcher {
    pub fn from_json(json: &str) -> Result<Self> {
        let f: UpdateLexiconFile = serde_json::from_str(json)?;
        let norm = |v: Vec<String>| v.into_iter().map(|s| collapse_whitespace(&s.to_lowercase())).collect();
        Ok(UpdateRequestMatcher {
            version: f.version,
            phrases: norm(f.phrases),
            cues: norm(f.request_cues),
            targets: norm(f.targets),
        })
    }

    pub fn bundled() -> Self {
        Self::from_json(include_str!("../resources/update_requests.json"))
            .expect("bundled update-request lexicon parses")
    }

    pub fn matches(&self, text: &str) -> bool {
        let t = collapse_whitespace(&text.to_lowercase());
        if self.phrases.iter().any(|p| contains_phrase(&t, p)) {
            return true;
        }
        self.cues.iter().any(|c| contains_phrase(&t, c))
            && self.targets.iter().any(|g| contains_phrase(&t, g))
    }
}

/// Update-request alert: fires when at least `update_request_min` of the
/// video's comments match. The baseline is zero by construction.
pub fn detect_update_requests(
    video_id: &str,
    comments: &[CommentRecord],
    matcher: &UpdateRequestMatcher,
    window_start: DateTime<Utc>,
    config: &AlertConfig,
) -> Option<Alert> {
    let ids: Vec<String> = comments
        .iter()
        .filter(|c| matcher.matches(&c.text))
        .map(|c| c.comment_id.clone())
        .collect();
    if (ids.len() as u64) < config.update_request_min || ids.is_empty() {
        return None;
    }
    Some(Alert {
        kind: AlertKind::UpdateRequests,
        video_id: video_id.to_string(),
        window_start,
        observed: ids.len() as f64,
        baseline: 0.0,
        deviation: ids.len() as f64,
        supporting_comment_ids: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    fn windows(counts: &[u64]) -> Vec<HistogramBucket> {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        counts
            .iter()
            .enumerate()
            .map(|(i, c)| HistogramBucket { bucket_start: t0 + Duration::weeks(i as i64), count: *c })
            .collect()
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(exp_smoothing_baseline(&[3.0, 7.0, 2.0], 1.0).unwrap(), 2.0);
        for a in [0.1, 0.5, 1.0] {
            assert_eq!(exp_smoothing_baseline(&[5.0, 5.0, 5.0], a).unwrap(), 5.0);
        }
        // s = 0, 2, 5
        assert_eq!(exp_smoothing_baseline(&[0.0, 4.0, 8.0], 0.5).unwrap(), 5.0);
        assert!(exp_smoothing_baseline(&[], 0.5).is_err());
        assert!(exp_smoothing_baseline(&[1.0], 0.0).is_err());
    }

    #[test]
    fn volume_examples() {
        let cfg = AlertConfig::default();
        let a = volume_alerts("v", &windows(&[10, 10, 10, 40]), &cfg);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].kind, AlertKind::VolumeHigh);
        assert_eq!(a[0].baseline, 10.0);
        assert_eq!(a[0].deviation, 4.0);
        assert!(volume_alerts("v", &windows(&[10, 10, 10, 10]), &cfg).is_empty());
        assert!(volume_alerts("v", &windows(&[0, 0, 1]), &cfg).is_empty());
        assert!(volume_alerts("v", &windows(&[10]), &cfg).is_empty());
        let low = volume_alerts("v", &windows(&[12, 12, 12, 1]), &cfg);
        assert_eq!(low[0].kind, AlertKind::VolumeLow);
    }

    #[test]
    fn weighted_baseline_examples() {
        let m = |month: u32, n: u64, mean: f64| MonthlySentiment {
            month: chrono::NaiveDate::from_ymd_opt(2024, month, 1).unwrap(),
            mean_scalar: mean,
            comment_count: n,
        };
        let cc = SentimentWeighting::CommentCount;
        assert_eq!(weighted_sentiment_baseline(&[m(1, 7, 0.4)], cc, 6.0), Some(0.4));
        assert_eq!(weighted_sentiment_baseline(&[m(1, 10, 0.2), m(2, 30, 0.6)], cc, 6.0), Some(0.5));
        let same = weighted_sentiment_baseline(&[m(1, 3, 0.1), m(2, 50, 0.1), m(3, 1, 0.1)], cc, 6.0);
        assert!((same.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(weighted_sentiment_baseline(&[], cc, 6.0), None);
        // Recency: a month one half-life older counts half as much.
        let r = weighted_sentiment_baseline(&[m(1, 10, 0.0), m(7, 10, 1.0)], SentimentWeighting::Recency, 6.0)
            .unwrap();
        assert!((r - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn sentiment_rule_examples() {
        let cfg = AlertConfig::default();
        let t = Utc.with_ymd_and_hms(2024, 5, 6, 0, 0, 0).unwrap();
        let a = sentiment_alert("v", t, &[0.5; 25], Some(0.0), &cfg).unwrap();
        assert_eq!(a.kind, AlertKind::SentimentPositive);
        assert_eq!(a.deviation, 0.5);
        assert!(sentiment_alert("v", t, &[0.2; 25], Some(0.0), &cfg).is_none());
        assert!(sentiment_alert("v", t, &[0.9; 19], Some(0.0), &cfg).is_none());
        let n = sentiment_alert("v", t, &[-0.5; 20], Some(0.0), &cfg).unwrap();
        assert_eq!(n.kind, AlertKind::SentimentNegative);
        assert!(sentiment_alert("v", t, &[0.9; 30], None, &cfg).is_none());
    }

    #[test]
    fn matcher_examples() {
        let m = UpdateRequestMatcher::bundled();
        assert!(m.matches("Please do an update on this story"));
        assert!(m.matches("Where are they NOW?"));
        assert!(m.matches("We need a part 2!"));
        assert!(!m.matches("great doc"));
        assert!(!m.matches("please stop"));
        assert!(!m.matches("the updates were confusing"));
    }

    #[test]
    fn config_validation() {
        assert!(AlertConfig::default().validate().is_ok());
        let bad = AlertConfig { volume_high_ratio: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AlertConfig { alpha: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
