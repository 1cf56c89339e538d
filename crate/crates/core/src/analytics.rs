//! Non-LLM dashboard feeders: summary statistics, comment-time histograms,
//! word-cloud terms, superfans, and video ordering.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CommentRecord, VideoRecord};
use crate::sentiment::mean_sentiment;
use crate::text::{content_terms, Stopwords};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsParams {
    #[serde(default = "default_superfan_min")]
    pub superfan_min_comments: u64,
    #[serde(default = "default_superfan_top")]
    pub superfan_top_n: usize,
    #[serde(default = "default_true")]
    pub superfan_include_replies: bool,
    #[serde(default = "default_wordcloud_k")]
    pub wordcloud_k: usize,
    /// Extra stopword file merged into the shipped list.
    #[serde(default)]
    pub extra_stopwords: Option<PathBuf>,
}

fn default_superfan_min() -> u64 {
    200
}
fn default_superfan_top() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_wordcloud_k() -> usize {
    100
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams {
            superfan_min_comments: default_superfan_min(),
            superfan_top_n: default_superfan_top(),
            superfan_include_replies: true,
            wordcloud_k: default_wordcloud_k(),
            extra_stopwords: None,
        }
    }
}

impl AnalyticsParams {
    pub fn validate(&self) -> Result<()> {
        if self.superfan_min_comments == 0 {
            return Err(Error::Config {
                field: "analytics.superfan_min_comments".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.wordcloud_k == 0 {
            return Err(Error::Config {
                field: "analytics.wordcloud_k".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoStats {
    pub video_id: String,
    pub comment_count: u64,
    pub view_count: u64,
    pub like_count: u64,
    pub mean_sentiment: Option<f64>,
    pub first_comment_at: Option<DateTime<Utc>>,
    pub last_comment_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub video_count: u64,
    pub total_views: u64,
    pub total_comments: u64,
    pub mean_sentiment: Option<f64>,
    pub last_collected_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub term: String,
    pub frequency: u64,
    pub mean_sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperfanEntry {
    pub author_id: String,
    pub author_display: String,
    pub comment_count: u64,
    pub mean_sentiment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Day,
    Week,
    Month,
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Bucket::Day),
            "week" => Ok(Bucket::Week),
            "month" => Ok(Bucket::Month),
            other => Err(Error::InvalidArgument(format!("unknown bucket `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub bucket_start: DateTime<Utc>,
    pub count: u64,
}

fn midnight(d: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight exists"))
}

/// Start of the bucket containing `t`. Weeks start on Monday.
pub fn bucket_start(t: &DateTime<Utc>, bucket: Bucket) -> DateTime<Utc> {
    let d = t.date_naive();
    match bucket {
        Bucket::Day => midnight(d),
        Bucket::Week => {
            midnight(d - Duration::days(i64::from(d.weekday().num_days_from_monday())))
        }
        Bucket::Month => {
            midnight(NaiveDate::from_ymd_opt(d.year(), d.month(), 1).expect("valid month start"))
        }
    }
}

pub fn next_bucket(start: &DateTime<Utc>, bucket: Bucket) -> DateTime<Utc> {
    match bucket {
        Bucket::Day => *start + Duration::days(1),
        Bucket::Week => *start + Duration::days(7),
        Bucket::Month => {
            let d = start.date_naive();
            let (y, m) = if d.month() == 12 { (d.year() + 1, 1) } else { (d.year(), d.month() + 1) };
            midnight(NaiveDate::from_ymd_opt(y, m, 1).expect("valid month start"))
        }
    }
}

/// Zero-filled contiguous counts from the first comment's bucket through
/// the bucket containing `through` (or the last comment, if later or absent).
pub fn bucket_counts(
    times: &[DateTime<Utc>],
    bucket: Bucket,
    through: Option<DateTime<Utc>>,
) -> Vec<HistogramBucket> {
    let Some(first) = times.iter().min() else {
        return Vec::new();
    };
    let mut last = *times.iter().max().expect("non-empty");
    if let Some(t) = through {
        last = last.max(t);
    }
    let mut counts: BTreeMap<DateTime<Utc>, u64> = BTreeMap::new();
    for t in times {
        *counts.entry(bucket_start(t, bucket)).or_default() += 1;
    }
    let end = bucket_start(&last, bucket);
    let mut out = Vec::new();
    let mut cur = bucket_start(first, bucket);
    while cur <= end {
        out.push(HistogramBucket { bucket_start: cur, count: counts.get(&cur).copied().unwrap_or(0) });
        cur = next_bucket(&cur, bucket);
    }
    out
}

pub fn comment_time_histogram(comments: &[CommentRecord], bucket: Bucket) -> Vec<HistogramBucket> {
    let times: Vec<_> = comments.iter().map(|c| c.published_at).collect();
    bucket_counts(&times, bucket, None)
}

/// Top-`k` terms by total frequency, ties broken lexicographically. Each
/// term's sentiment is the mean scalar over the comments containing it.
pub fn wordcloud_terms<'a, I>(comments: I, stopwords: &Stopwords, k: usize) -> Vec<TermEntry>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut freq: HashMap<String, (u64, f64, u64)> = HashMap::new();
    for (text, scalar) in comments {
        let mut seen_here: HashMap<String, ()> = HashMap::new();
        for term in content_terms(text, stopwords) {
            let e = freq.entry(term.clone()).or_insert((0, 0.0, 0));
            e.0 += 1;
            if seen_here.insert(term, ()).is_none() {
                e.1 += scalar;
                e.2 += 1;
            }
        }
    }
    let mut entries: Vec<TermEntry> = freq
        .into_iter()
        .map(|(term, (frequency, sum, docs))| TermEntry {
            term,
            frequency,
            mean_sentiment: sum / docs as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.term.cmp(&b.term)));
    entries.truncate(k);
    entries
}

/// Authors with at least `min_comments` comments, ranked by mean sentiment
/// (descending), then comment count (descending), then author ID.
pub fn superfans(
    comments: &[CommentRecord],
    scalars: &HashMap<String, f64>,
    min_comments: u64,
    top_n: usize,
    include_replies: bool,
) -> Vec<SuperfanEntry> {
    struct Acc<'a> {
        display: &'a str,
        latest: DateTime<Utc>,
        sum: f64,
        n: u64,
    }
    let mut by_author: HashMap<&str, Acc<'_>> = HashMap::new();
    for c in comments {
        if !include_replies && c.is_reply() {
            continue;
        }
        let Some(s) = scalars.get(&c.comment_id) else { continue };
        let e = by_author.entry(&c.author_id).or_insert(Acc {
            display: &c.author_display,
            latest: c.published_at,
            sum: 0.0,
            n: 0,
        });
        if c.published_at >= e.latest {
            e.latest = c.published_at;
            e.display = &c.author_display;
        }
        e.sum += s;
        e.n += 1;
    }
    let mut out: Vec<SuperfanEntry> = by_author
        .into_iter()
        .filter(|(_, a)| a.n >= min_comments)
        .map(|(id, a)| SuperfanEntry {
            author_id: id.to_string(),
            author_display: a.display.to_string(),
            comment_count: a.n,
            mean_sentiment: a.sum / a.n as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_sentiment
            .partial_cmp(&a.mean_sentiment)
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.comment_count.cmp(&a.comment_count))
            .then_with(|| a.author_id.cmp(&b.author_id))
    });
    out.truncate(top_n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    Chronological,
    Alphabetical,
    Views,
    Likes,
    Comments,
}

impl FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "chronological" => SortKey::Chronological,
            "alphabetical" => SortKey::Alphabetical,
            "views" => SortKey::Views,
            "likes" => SortKey::Likes,
            "comments" => SortKey::Comments,
            other => return Err(Error::InvalidArgument(format!("unknown sort key `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Asc,
    Desc,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asc" | "ascending" => Ok(Direction::Asc),
            "desc" | "descending" => Ok(Direction::Desc),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// Order videos by `key`. Ties always fall back to ascending `video_id`, so
/// the order is total and identical across runs. The `comments` key uses
/// ingested comment counts (missing entries count as zero).
pub fn sort_videos(
    videos: &[VideoRecord],
    comment_counts: &HashMap<String, u64>,
    key: SortKey,
    direction: Direction,
) -> Vec<VideoRecord> {
    let mut out = videos.to_vec();
    let count = |v: &VideoRecord| comment_counts.get(&v.video_id).copied().unwrap_or(0);
    out.sort_by(|a, b| {
        let primary = match key {
            SortKey::Chronological => a.published_at.cmp(&b.published_at),
            SortKey::Alphabetical => a.title.to_lowercase().cmp(&b.title.to_lowercase()),
            SortKey::Views => a.view_count.cmp(&b.view_count),
            SortKey::Likes => a.like_count.cmp(&b.like_count),
            SortKey::Comments => count(a).cmp(&count(b)),
        };
        let primary = match direction {
            Direction::Asc => primary,
            Direction::Desc => primary.reverse(),
        };
        primary.then_with(|| a.video_id.cmp(&b.video_id))
    });
    out
}

/// Statistics for one video. `scalars` is absent when the sentiment stage
/// has not run.
pub fn video_summary(
    video: &VideoRecord,
    comments: &[CommentRecord],
    scalars: Option<&HashMap<String, f64>>,
) -> VideoStats {
    let mean = scalars.and_then(|s| {
        mean_sentiment(comments.iter().filter_map(|c| s.get(&c.comment_id).copied()))
    });
    VideoStats {
        video_id: video.video_id.clone(),
        comment_count: comments.len() as u64,
        view_count: video.view_count,
        like_count: video.like_count,
        mean_sentiment: mean,
        first_comment_at: comments.iter().map(|c| c.published_at).min(),
        last_comment_at: comments.iter().map(|c| c.published_at).max(),
    }
}

/// Channel totals. The mean is taken over all comments, not over
/// per-video means.
pub fn channel_summary(
    videos: &[VideoRecord],
    comments: &[CommentRecord],
    scalars: Option<&HashMap<String, f64>>,
) -> ChannelStats {
    ChannelStats {
        video_count: videos.len() as u64,
        total_views: videos.iter().map(|v| v.view_count).sum(),
        total_comments: comments.len() as u64,
        mean_sentiment: scalars.and_then(|s| {
            mean_sentiment(comments.iter().filter_map(|c| s.get(&c.comment_id).copied()))
        }),
        last_collected_at: videos.iter().map(|v| v.fetched_at).max(),
    }
}
