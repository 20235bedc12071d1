//! Seeded synthetic sentiment and spam corpora.
//!
//! Sentiment texts mix two or three words from a polarity lexicon into
//! neutral filler. Spam texts lean towards positive wording and short
//! (shortener) URLs, while ham texts spread over all polarities and more
//! often carry long URLs. The URL bodies are random, so without URL tags a
//! model only sees that some URL is present.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::model::mix_seed;
use crate::text::{Sentiment, SHORT_URL_CHARS};

const POSITIVE: &[&str] = &[
    "love", "great", "awesome", "happy", "amazing", "best", "wonderful", "excited", "fantastic", "glad",
    "beautiful", "perfect", "fun", "lovely", "brilliant", "enjoy", "cool", "nice", "thanks", "win",
    "superb", "delighted", "cheerful", "sweet", "proud", "yay", "excellent", "smile", "blessed", "grateful",
    "thrilled", "joy", "incredible", "favorite", "epic", "lucky", "adore", "bright", "stunning", "gorgeous",
];

const NEGATIVE: &[&str] = &[
    "hate", "awful", "sad", "terrible", "worst", "angry", "horrible", "bored", "sick", "tired",
    "annoying", "ugly", "miss", "upset", "broken", "fail", "boring", "hurt", "crying", "lonely",
    "disappointed", "stupid", "painful", "gross", "sucks", "lost", "depressed", "worried", "afraid", "nasty",
    "useless", "rude", "dreadful", "miserable", "sorry", "mad", "grim", "pathetic", "sore", "unhappy",
];

const FILLER: &[&str] = &[
    "the", "a", "today", "this", "that", "my", "your", "new", "just", "really", "so", "is", "it", "was",
    "at", "on", "in", "with", "for", "and", "we", "they", "you", "i", "day", "night", "week", "morning",
    "phone", "game", "music", "show", "video", "team", "work", "school", "home", "city", "food", "coffee",
    "weekend", "time", "people", "friends", "movie", "song", "news", "post", "check", "look", "get", "got",
    "see", "now", "here", "there", "about", "all", "out", "up", "more", "one", "what", "when", "how", "again",
    "still", "going", "back", "deal", "offer", "follow", "free", "click", "link", "online",
];

const SHORTENERS: &[&str] = &["bit.ly", "ow.ly", "t.co", "goo.gl", "is.gd", "tiny.cc"];

const SITES: &[&str] = &[
    "www.dailynewsreport.com",
    "blog.examplecity.org",
    "www.sportsupdates.net",
    "www.weatherservice.gov",
    "www.localtheatre.co.uk",
    "www.musicreviews.com",
];

const PATH_WORDS: &[&str] = &["2009", "article", "story", "local", "updates", "photos", "events", "review"];

/// Words that carry the given polarity; neutral gives the filler vocabulary.
pub fn lexicon(sentiment: Sentiment) -> &'static [&'static str] {
    match sentiment {
        Sentiment::Positive => POSITIVE,
        Sentiment::Negative => NEGATIVE,
        Sentiment::Neutral => FILLER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub sentiment_examples: usize,
    pub spam_examples: usize,
    pub unlabeled_examples: usize,
    /// Fraction of spam among labeled and unlabeled tweets.
    pub spam_rate: f64,
    /// Probability that a sentiment label is flipped.
    pub label_noise: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sentiment_examples: 3000,
            spam_examples: 2500,
            unlabeled_examples: 2000,
            spam_rate: 0.4,
            label_noise: 0.03,
            train_fraction: 0.8,
            validation_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !prob(self.spam_rate) || !prob(self.label_noise) {
            return Err(Error::Config("spam_rate and label_noise must lie in [0, 1]".into()));
        }
        if !prob(self.train_fraction)
            || !prob(self.validation_fraction)
            || self.train_fraction + self.validation_fraction > 1.0
        {
            return Err(Error::Config(
                "train and validation fractions must be in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCorpus {
    /// Labels 0 (negative) and 1 (positive).
    pub sentiment: Splits,
    /// Labels 0 (ham) and 1 (spam).
    pub spam: Splits,
    pub unlabeled: Vec<Example>,
}

const STREAM_SENTIMENT: u64 = 11;
const STREAM_SPAM: u64 = 12;
const STREAM_UNLABELED: u64 = 13;
const STREAM_SPLIT_SENTIMENT: u64 = 14;
const STREAM_SPLIT_SPAM: u64 = 15;

/// Shuffles with `seed` and cuts into train, validation and test parts.
pub fn split(mut examples: Vec<Example>, train_fraction: f64, validation_fraction: f64, seed: u64) -> Splits {
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = examples.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let n_val = ((n as f64 * validation_fraction).round() as usize).min(n - n_train);
    let test = examples.split_off(n_train + n_val);
    let validation = examples.split_off(n_train);
    Splits {
        train: examples,
        validation,
        test,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

fn random_code(rng: &mut ChaCha8Rng, len: usize) -> String {
    const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    (0..len).map(|_| *ALNUM.choose(rng).expect("alphabet") as char).collect()
}

fn short_url(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(4..=7);
    let url = format!("http://{}/{}", pick(rng, SHORTENERS), random_code(rng, len));
    debug_assert!(url.len() < SHORT_URL_CHARS);
    url
}

fn long_url(rng: &mut ChaCha8Rng) -> String {
    let url = format!(
        "http://{}/{}/{}-{}",
        pick(rng, SITES),
        pick(rng, PATH_WORDS),
        pick(rng, PATH_WORDS),
        random_code(rng, 6)
    );
    debug_assert!(url.len() >= SHORT_URL_CHARS);
    url
}

/// Filler with `polar` inserted at random positions.
fn sentence(rng: &mut ChaCha8Rng, polar: &[&str], len: usize) -> Vec<String> {
    let mut words: Vec<String> = (0..len.saturating_sub(polar.len()))
        .map(|_| pick(rng, FILLER).to_string())
        .collect();
    for w in polar {
        let at = rng.random_range(0..=words.len());
        words.insert(at, w.to_string());
    }
    words
}

fn sentiment_text(rng: &mut ChaCha8Rng, positive: bool) -> String {
    let lex = if positive { POSITIVE } else { NEGATIVE };
    let k = rng.random_range(2..=3);
    let polar: Vec<&str> = (0..k).map(|_| pick(rng, lex)).collect();
    let len = rng.random_range(8..=13);
    let mut words = sentence(rng, &polar, len);
    if rng.random_bool(0.3) {
        words.push("!".into());
    }
    words.join(" ")
}

fn choose_by(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One tweet. Spam: polarity 65/20/15 positive/neutral/negative, URL
/// 75/5/20 short/long/none. Ham: polarity 30/35/35, URL 5/45/50.
fn tweet(rng: &mut ChaCha8Rng, spam: bool) -> String {
    let (polarity, urls) = if spam {
        ([0.65, 0.2, 0.15], [0.75, 0.05, 0.2])
    } else {
        ([0.3, 0.35, 0.35], [0.05, 0.45, 0.5])
    };
    let polar: Vec<&str> = match choose_by(rng, &polarity) {
        0 => (0..2).map(|_| pick(rng, POSITIVE)).collect(),
        1 => Vec::new(),
        _ => (0..2).map(|_| pick(rng, NEGATIVE)).collect(),
    };
    let len = rng.random_range(8..=12);
    let mut words = sentence(rng, &polar, len);
    match choose_by(rng, &urls) {
        0 => words.push(short_url(rng)),
        1 => words.push(long_url(rng)),
        _ => {}
    }
    words.join(" ")
}

fn tweets(config: &SynthConfig, n: usize, stream: u64, prefix: &str, labeled: bool) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, stream));
    (0..n)
        .map(|i| {
            let spam = rng.random_bool(config.spam_rate);
            let text = tweet(&mut rng, spam);
            Example::new(format!("{prefix}{i}"), text, labeled.then_some(spam as usize))
        })
        .collect()
}

/// The full seeded corpus. Equal seeds give equal corpora.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, STREAM_SENTIMENT));
    let sentiment: Vec<Example> = (0..config.sentiment_examples)
        .map(|i| {
            let positive = rng.random_bool(0.5);
            let text = sentiment_text(&mut rng, positive);
            let label = positive ^ rng.random_bool(config.label_noise);
            Example::new(format!("s{i}"), text, Some(label as usize))
        })
        .collect();
    let spam = tweets(config, config.spam_examples, STREAM_SPAM, "t", true);
    let unlabeled = tweets(config, config.unlabeled_examples, STREAM_UNLABELED, "u", false);
    let cut = |ex, stream| {
        split(
            ex,
            config.train_fraction,
            config.validation_fraction,
            mix_seed(config.seed, stream),
        )
    };
    Ok(SynthCorpus {
        sentiment: cut(sentiment, STREAM_SPLIT_SENTIMENT),
        spam: cut(spam, STREAM_SPLIT_SPAM),
        unlabeled,
    })
}
