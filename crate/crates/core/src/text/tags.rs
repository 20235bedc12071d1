use serde::{Deserialize, Serialize};

use super::{is_sentiment_tag, URL_RE, TAG_NEG, TAG_NEU, TAG_POS, TAG_URL_LONG, TAG_URL_SHORT};
use crate::error::{Error, Result};

/// URLs shorter than this many characters (scheme included) are "short".
pub const SHORT_URL_CHARS: usize = 24;

/// Three-way sentiment derived from the positive-class probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    /// `x < 0.3` is negative, `x > 0.7` positive, anything else neutral.
    ///
    /// ```
    /// use tagvat::text::Sentiment;
    /// assert_eq!(Sentiment::from_probability(0.2).unwrap(), Sentiment::Negative);
    /// assert_eq!(Sentiment::from_probability(0.3).unwrap(), Sentiment::Neutral);
    /// assert_eq!(Sentiment::from_probability(0.71).unwrap(), Sentiment::Positive);
    /// ```
    pub fn from_probability(x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Numeric(format!(
                "sentiment probability {x} outside [0, 1]"
            )));
        }
        Ok(if x < 0.3 {
            Sentiment::Negative
        } else if x > 0.7 {
            Sentiment::Positive
        } else {
            Sentiment::Neutral
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Sentiment::Negative => TAG_NEG,
            Sentiment::Neutral => TAG_NEU,
            Sentiment::Positive => TAG_POS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

/// Prefixes the sentiment tag token: `"TAGPOS hello"`.
pub fn inject_sentiment_tag(text: &str, sentiment: Sentiment) -> String {
    format!("{} {}", sentiment.tag(), text)
}

/// Removes a leading sentiment tag, if any.
pub fn strip_sentiment_tag(text: &str) -> String {
    let mut words = text.split_whitespace();
    match words.next() {
        Some(first) if is_sentiment_tag(first) => words.collect::<Vec<_>>().join(" "),
        _ => text.to_string(),
    }
}

/// `TAGURLS` for URLs under [`SHORT_URL_CHARS`] characters, else `TAGURLL`.
pub fn url_tag(url: &str) -> &'static str {
    if url.chars().count() < SHORT_URL_CHARS {
        TAG_URL_SHORT
    } else {
        TAG_URL_LONG
    }
}

/// Outcome of rewriting one text with URL tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlTagging {
    pub text: String,
    pub short: usize,
    pub long: usize,
}

/// [`inject_url_tags_with`] with URL bodies removed.
///
/// ```
/// use tagvat::text::inject_url_tags;
/// assert_eq!(
///     inject_url_tags("TAGPOS buy now http://ow.ly/Ul1t"),
///     "TAGPOS TAGURLS buy now"
/// );
/// ```
pub fn inject_url_tags(text: &str) -> String {
    inject_url_tags_with(text, false).text
}

/// Adds one URL tag per URL, in URL order, right after the leading
/// sentiment tag (or at the front when there is none). Unless `keep_body`
/// is set the URLs themselves are removed from the text. Texts that already
/// carry URL tags in that position, or contain no URL, are returned as-is.
pub fn inject_url_tags_with(text: &str, keep_body: bool) -> UrlTagging {
    let unchanged = || UrlTagging {
        text: text.to_string(),
        short: 0,
        long: 0,
    };
    let mut words = text.split_whitespace();
    let lead = words.next();
    let after_lead = if lead.is_some_and(is_sentiment_tag) {
        words.next()
    } else {
        lead
    };
    if after_lead.is_some_and(|w| w == TAG_URL_SHORT || w == TAG_URL_LONG) {
        return unchanged();
    }
    let tags: Vec<&str> = URL_RE.find_iter(text).map(|m| url_tag(m.as_str())).collect();
    if tags.is_empty() {
        return unchanged();
    }
    let short = tags.iter().filter(|t| **t == TAG_URL_SHORT).count();
    let body = if keep_body {
        text.to_string()
    } else {
        URL_RE.replace_all(text, " ").into_owned()
    };
    let mut body_words = body.split_whitespace().peekable();
    let mut out: Vec<&str> = Vec::new();
    if let Some(first) = body_words.peek().copied() {
        if is_sentiment_tag(first) {
            out.push(first);
            body_words.next();
        }
    }
    out.extend(&tags);
    out.extend(body_words);
    UrlTagging {
        text: out.join(" "),
        short,
        long: tags.len() - short,
    }
}
