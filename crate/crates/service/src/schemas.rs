//! JSON schemas for every response body, shipped with the crate.

macro_rules! schema {
    ($name:literal) => {
        ($name, include_str!(concat!("../schemas/", $name, ".json")))
    };
}

pub const ALL: &[(&str, &str)] = &[
    schema!("health"),
    schema!("snapshot"),
    schema!("channel"),
    schema!("report"),
    schema!("topics"),
    schema!("topic_comments"),
    schema!("alerts"),
    schema!("superfans"),
    schema!("videos"),
    schema!("video_stats"),
    schema!("timeseries"),
    schema!("wordcloud"),
    schema!("comments"),
    schema!("error"),
];

/// Route pattern to schema name, for every GET endpoint.
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("/api/health", "health"),
    ("/api/snapshot", "snapshot"),
    ("/api/channel", "channel"),
    ("/api/channel/themes", "report"),
    ("/api/channel/suggestions", "report"),
    ("/api/channel/topics", "topics"),
    ("/api/channel/topics/{cluster_id}/comments", "topic_comments"),
    ("/api/channel/alerts", "alerts"),
    ("/api/channel/superfans", "superfans"),
    ("/api/videos", "videos"),
    ("/api/videos/{id}/stats", "video_stats"),
    ("/api/videos/{id}/themes", "report"),
    ("/api/videos/{id}/suggestions", "report"),
    ("/api/videos/{id}/timeseries", "timeseries"),
    ("/api/videos/{id}/wordcloud", "wordcloud"),
    ("/api/videos/{id}/comments", "comments"),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
