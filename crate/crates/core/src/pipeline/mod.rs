//! The two-stage pipeline over files: sentiment tagging with a trained
//! sentiment classifier, URL tagging, and training, evaluating and storing
//! text classifiers together with their vocabulary.

mod config;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::AdvMethod;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{sentiment_class, ModelConfig, TransformerClassifier};
use crate::text::{
    encode_text, inject_sentiment_tag, inject_url_tags_with, strip_sentiment_tag, Sentiment, TokenSeq, Vocab,
};
use crate::train::{evaluate, train_semisupervised, train_supervised, Labeled, Metrics, TrainConfig, TrainHistory};

pub use config::{component_seed, RunConfig, RunPaths, VocabConfig, ENV_RUN_DIR, ENV_RUN_SEED};

pub const MODEL_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SETTINGS_FILE: &str = "settings.json";

/// Text rewrites applied before tokenization, stored with the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    /// Drop a leading sentiment tag from every text.
    pub strip_sentiment_tags: bool,
}

impl Preprocessing {
    pub fn apply(&self, text: &str) -> String {
        if self.strip_sentiment_tags {
            strip_sentiment_tag(text)
        } else {
            text.to_string()
        }
    }
}

/// A trained model with the vocabulary and preprocessing it expects.
#[derive(Debug, Clone)]
pub struct TextClassifier {
    pub model: TransformerClassifier,
    pub vocab: Vocab,
    pub preprocessing: Preprocessing,
}

impl TextClassifier {
    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        encode_text(&self.preprocessing.apply(text), &self.vocab, self.model.config().max_len)
    }

    pub fn encode_all(&self, examples: &[Example]) -> Result<Vec<TokenSeq>> {
        examples.iter().map(|e| self.encode(&e.text)).collect()
    }

    /// Encoded examples with their labels; unlabeled examples are an error.
    pub fn encode_labeled(&self, examples: &[Example]) -> Result<Vec<Labeled>> {
        examples
            .iter()
            .map(|e| {
                let label = e
                    .label
                    .ok_or_else(|| Error::Data(format!("example {} has no label", e.id)))?;
                Ok(Labeled {
                    seq: self.encode(&e.text)?,
                    label,
                })
            })
            .collect()
    }

    pub fn predict_proba(&self, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
        self.model.predict_proba_batch(&self.encode_all(examples)?)
    }

    pub fn predict(&self, examples: &[Example]) -> Result<Vec<usize>> {
        self.model.predict(&self.encode_all(examples)?)
    }

    pub fn evaluate(&self, examples: &[Example]) -> Result<Metrics> {
        evaluate(&self.model, &self.encode_labeled(examples)?)
    }

    /// Writes `model.json`, `vocab.txt` and `settings.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(&dir.join(MODEL_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let settings = dir.join(SETTINGS_FILE);
        let json = serde_json::to_string_pretty(&self.preprocessing)? + "\n";
        std::fs::write(&settings, json).map_err(|e| Error::io(settings, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = TransformerClassifier::load(&dir.join(MODEL_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let settings = dir.join(SETTINGS_FILE);
        let text = std::fs::read_to_string(&settings).map_err(|e| Error::io(&settings, e))?;
        let preprocessing = serde_json::from_str(&text)?;
        if vocab.len() > model.config().vocab_size {
            return Err(Error::Data(format!(
                "vocabulary of {} tokens exceeds the model's {} embedding rows",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Self {
            model,
            vocab,
            preprocessing,
        })
    }
}

/// Everything needed to train one classifier from examples.
#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub train: &'a [Example],
    pub validation: Option<&'a [Example]>,
    /// Used for the vocabulary and, with VAT, for the smoothness term.
    pub unlabeled: &'a [Example],
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: VocabConfig,
    pub preprocessing: Preprocessing,
}

/// Builds the vocabulary from the training and unlabeled texts, sizes the
/// embedding table to it and trains. VAT runs semi-supervised, every other
/// method supervised.
pub fn train_classifier(req: &TrainRequest<'_>) -> Result<(TextClassifier, TrainHistory)> {
    let texts: Vec<String> = req
        .train
        .iter()
        .chain(req.unlabeled)
        .map(|e| req.preprocessing.apply(&e.text))
        .collect();
    let vocab = Vocab::build(&texts, req.vocab.max_size, req.vocab.min_freq)?;
    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        ..req.model.clone()
    };
    let mut clf = TextClassifier {
        model: TransformerClassifier::new(model_config)?,
        vocab,
        preprocessing: req.preprocessing,
    };
    let train = clf.encode_labeled(req.train)?;
    let validation = req.validation.map(|v| clf.encode_labeled(v)).transpose()?;
    let history = if req.train_config.adv.method == AdvMethod::Vat {
        let unlabeled = clf.encode_all(req.unlabeled)?;
        train_semisupervised(&mut clf.model, &train, &unlabeled, validation.as_deref(), &req.train_config)?
    } else {
        train_supervised(&mut clf.model, &train, validation.as_deref(), &req.train_config)?
    };
    Ok((clf, history))
}

/// Counts of sentiment tags overall and per label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDistribution {
    /// Keyed by `negative`, `neutral`, `positive`; all three present.
    pub counts: BTreeMap<String, usize>,
    /// Keyed by label (`0`, `1`, or `unlabeled`), then by sentiment.
    pub by_label: BTreeMap<String, BTreeMap<String, usize>>,
}

impl TagDistribution {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    fn record(&mut self, label: Option<usize>, s: Sentiment) {
        *self.counts.entry(s.name().into()).or_default() += 1;
        let key = label.map_or_else(|| "unlabeled".to_string(), |l| l.to_string());
        let row = self
            .by_label
            .entry(key)
            .or_insert_with(|| Sentiment::ALL.iter().map(|s| (s.name().to_string(), 0)).collect());
        *row.entry(s.name().into()).or_default() += 1;
    }
}

/// Prefixes every text with the tag of its predicted sentiment. Existing
/// sentiment tags are replaced, labels and ids are kept.
pub fn stage1_tag(examples: &[Example], sentiment: &TextClassifier) -> Result<(Vec<Example>, TagDistribution)> {
    let stripped: Vec<Example> = examples
        .iter()
        .map(|e| Example {
            text: strip_sentiment_tag(&e.text),
            ..e.clone()
        })
        .collect();
    let probs = sentiment.predict_proba(&stripped)?;
    let mut dist = TagDistribution {
        counts: Sentiment::ALL.iter().map(|s| (s.name().to_string(), 0)).collect(),
        by_label: BTreeMap::new(),
    };
    let mut out = Vec::with_capacity(examples.len());
    for (e, p) in stripped.into_iter().zip(probs) {
        let s = sentiment_class(p[1])?;
        dist.record(e.label, s);
        out.push(Example {
            text: inject_sentiment_tag(&e.text, s),
            ..e
        });
    }
    Ok((out, dist))
}

/// URL tag totals of one [`improve`] pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlSummary {
    pub examples: usize,
    pub examples_with_urls: usize,
    pub short: usize,
    pub long: usize,
}

/// Adds URL tags after the sentiment tag of every example. Already tagged
/// texts are left alone, so applying it twice changes nothing.
pub fn improve(examples: &[Example], keep_url_body: bool) -> (Vec<Example>, UrlSummary) {
    let mut summary = UrlSummary {
        examples: examples.len(),
        ..UrlSummary::default()
    };
    let out = examples
        .iter()
        .map(|e| {
            let t = inject_url_tags_with(&e.text, keep_url_body);
            if t.short + t.long > 0 {
                summary.examples_with_urls += 1;
            }
            summary.short += t.short;
            summary.long += t.long;
            Example {
                text: t.text,
                ..e.clone()
            }
        })
        .collect();
    (out, summary)
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
