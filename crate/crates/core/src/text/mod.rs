//! Word-level tokenization, the vocabulary with its special and tag tokens,
//! and the text rewrites that inject sentiment and URL tags.

mod tags;
mod vocab;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tags::{
    inject_sentiment_tag, inject_url_tags, inject_url_tags_with, strip_sentiment_tag, url_tag,
    Sentiment, UrlTagging, SHORT_URL_CHARS,
};
pub use vocab::{Vocab, RESERVED};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

pub const TAG_POS: &str = "TAGPOS";
pub const TAG_NEU: &str = "TAGNEU";
pub const TAG_NEG: &str = "TAGNEG";
pub const TAG_URL_SHORT: &str = "TAGURLS";
pub const TAG_URL_LONG: &str = "TAGURLL";
pub const TAGS: [&str; 5] = [TAG_POS, TAG_NEU, TAG_NEG, TAG_URL_SHORT, TAG_URL_LONG];
pub const SENTIMENT_TAGS: [&str; 3] = [TAG_POS, TAG_NEU, TAG_NEG];

/// `http://` or `https://` up to the next whitespace.
pub(crate) static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)https?://\S+").expect("valid URL pattern"));

pub fn is_tag(token: &str) -> bool {
    TAGS.contains(&token)
}

pub fn is_sentiment_tag(token: &str) -> bool {
    SENTIMENT_TAGS.contains(&token)
}

/// Lowercased word tokens with punctuation split off. URLs stay single
/// tokens and tag tokens are passed through verbatim.
///
/// ```
/// use tagvat::text::tokenize;
/// assert_eq!(tokenize("Nice guys rock!"), ["nice", "guys", "rock", "!"]);
/// assert_eq!(tokenize("TAGPOS hello"), ["TAGPOS", "hello"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_tag(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut last = 0;
        for m in URL_RE.find_iter(chunk) {
            split_words(&chunk[last..m.start()], &mut out);
            out.push(m.as_str().to_lowercase());
            last = m.end();
        }
        split_words(&chunk[last..], &mut out);
    }
    out
}

fn split_words(s: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
}

/// A fixed-length encoded sequence: `[CLS] tokens [SEP] [PAD]...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    /// Display labels of the real positions, `[CLS]` and `[SEP]` included.
    /// Out-of-vocabulary words keep their surface form here.
    pub tokens: Vec<String>,
}

impl TokenSeq {
    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids of the non-padding positions.
    pub fn real_ids(&self) -> &[usize] {
        &self.ids[..self.real_len()]
    }

    /// Word tokens between `[CLS]` and `[SEP]`.
    pub fn words(&self) -> &[String] {
        let n = self.tokens.len();
        &self.tokens[1..n - 1]
    }
}

/// `[CLS] + tokens (truncated to max_len - 2) + [SEP]`, padded to `max_len`.
/// Unknown tokens map to `[UNK]`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} must be at least 3")));
    }
    let kept = &tokens[..tokens.len().min(max_len - 2)];
    let mut ids = Vec::with_capacity(max_len);
    let mut labels = Vec::with_capacity(kept.len() + 2);
    ids.push(CLS_ID);
    labels.push(CLS.to_string());
    for t in kept {
        ids.push(vocab.id(t.as_ref()));
        labels.push(t.as_ref().to_string());
    }
    ids.push(SEP_ID);
    labels.push(SEP.to_string());
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok(TokenSeq {
        ids,
        mask,
        tokens: labels,
    })
}

/// Tokenize and encode in one step.
pub fn encode_text(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    encode(&tokenize(text), vocab, max_len)
}

/// Vocabulary tokens of the positions between `[CLS]` and `[SEP]`.
pub fn decode(seq: &TokenSeq, vocab: &Vocab) -> Vec<String> {
    seq.ids
        .iter()
        .skip(1)
        .take_while(|&&id| id != SEP_ID)
        .map(|&id| vocab.token(id).unwrap_or(UNK).to_string())
        .collect()
}
