use std::collections::HashMap;
use std::path::Path;

use super::{tokenize, SPECIALS, TAGS, UNK_ID};
use crate::error::{Error, Result};

/// Bijective token/id mapping. Ids `0..4` are `[PAD] [UNK] [CLS] [SEP]`,
/// ids `4..9` the five tag tokens, then corpus tokens by descending frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Number of reserved ids (specials and tags).
pub const RESERVED: usize = SPECIALS.len() + TAGS.len();

impl Vocab {
    /// Keeps the most frequent tokens seen at least `min_freq` times, up to
    /// `max_size` entries in total. Ties are broken lexicographically.
    pub fn build<I, S>(corpus: I, max_size: usize, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size <= RESERVED {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} leaves no room beyond the {RESERVED} reserved tokens"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut texts = 0usize;
        for text in corpus {
            texts += 1;
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if texts == 0 {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&t.as_str()) && !TAGS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED);
        let tokens = SPECIALS
            .iter()
            .chain(TAGS.iter())
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Vocabulary whose ids are the positions in `tokens`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().chain(TAGS.iter()).enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Data(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the `[UNK]` id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
