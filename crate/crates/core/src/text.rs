//! Tokenization and stopword handling shared by the word cloud, the stub
//! models, and the update-request matcher.

use std::collections::HashSet;
use std::path::Path;

use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Shipped English stopword list (versioned in its header comment).
pub const DEFAULT_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");

/// Split on Unicode word boundaries and lowercase each word.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.unicode_words().map(|w| w.to_lowercase())
}

/// Collapse runs of whitespace into single spaces and trim the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Truncate to at most `max_chars` characters, on a char boundary.
pub fn head_chars(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// Keep the first `max_tokens` whitespace-delimited tokens.
pub fn head_tokens(s: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if count == max_tokens {
                return s[..i].trim_end();
            }
            count += 1;
            in_token = true;
        }
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    /// Parse a stopword file: one term per line, `#` starts a comment.
    pub fn parse(contents: &str) -> Self {
        let mut s = Stopwords::default();
        s.extend_from(contents);
        s
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn extend_from(&mut self, contents: &str) {
        for line in contents.lines() {
            let term = line.split('#').next().unwrap_or("").trim();
            if !term.is_empty() {
                self.words.insert(term.to_lowercase());
            }
        }
    }

    pub fn extend_from_file(&mut self, path: &Path) -> Result<()> {
        let contents = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "analytics.extra_stopwords".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        self.extend_from(&contents);
        Ok(())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.words.contains(term)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Content terms of a text: casefolded words of at least three characters
/// that are not stopwords.
pub fn content_terms<'a>(
    text: &'a str,
    stopwords: &'a Stopwords,
) -> impl Iterator<Item = String> + 'a {
    words(text).filter(move |w| w.chars().count() >= 3 && !stopwords.contains(w))
}
