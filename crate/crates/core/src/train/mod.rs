//! Training loops and evaluation.
//!
//! [`train_supervised`] descends the clean cross-entropy, plus the
//! cross-entropy at an FGM or PGD perturbation when one is configured.
//! [`train_semisupervised`] adds `lds_weight` times the virtual adversarial
//! smoothness term over a second batch drawn from labeled and unlabeled
//! texts alike. Runs are bit-for-bit reproducible from the seed.

mod adam;
mod metrics;

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    adversarial_loss, compute_lds, fgm_attack, pgd_perturb, vat_perturb_with_targets, virtual_targets, AdvConfig,
    AdvMethod, Perturbation,
};
use crate::error::{Error, Result};
use crate::model::{mix_seed, Batch, BoundParams, Mode, TransformerClassifier};
use crate::tensor::{Graph, Tensor};
use crate::text::TokenSeq;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{Metrics, METRICS_COLUMNS};

/// A sequence with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub seq: TokenSeq,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub adam: AdamConfig,
    pub adv: AdvConfig,
    pub lds_weight: f64,
    pub seed: u64,
    /// Record metrics every this many steps; 0 records only the last step.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 3e-4,
            steps: 300,
            adam: AdamConfig::default(),
            adv: AdvConfig::default(),
            lds_weight: 1.0,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    /// Learning rate and step count used for fine-tuning a pretrained
    /// sentiment model.
    pub fn fine_tune_sentiment() -> Self {
        Self {
            learning_rate: 2e-5,
            steps: 10_000,
            ..Self::default()
        }
    }

    /// Learning rate and step count used for fine-tuning a pretrained spam
    /// model.
    pub fn fine_tune_spam() -> Self {
        Self {
            learning_rate: 1e-5,
            steps: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size and steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.lds_weight >= 0.0 && self.lds_weight.is_finite()) {
            return Err(Error::Config(format!("lds_weight {} must be >= 0", self.lds_weight)));
        }
        self.adam.validate()?;
        self.adv.validate()
    }
}

/// Losses of one step and, at evaluation steps, the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub lds: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// `(clean_loss, adv_loss, lds)` of every step.
    pub losses: Vec<[f64; 3]>,
    pub records: Vec<HistoryRecord>,
    pub warnings: Vec<String>,
}

pub const HISTORY_COLUMNS: [&str; 8] = [
    "step",
    "clean_loss",
    "adv_loss",
    "lds",
    "precision",
    "accuracy",
    "recall",
    "f1",
];

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HISTORY_COLUMNS)?;
        for r in &self.records {
            let m = &r.metrics;
            w.write_record([
                r.step.to_string(),
                r.clean_loss.to_string(),
                r.adv_loss.to_string(),
                r.lds.to_string(),
                m.precision.to_string(),
                m.accuracy.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn last_metrics(&self) -> Option<&Metrics> {
        self.records.last().map(|r| &r.metrics)
    }
}

/// Shuffled passes over `0..n`, reshuffled each epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;
const STREAM_STEP: u64 = 3;

fn dropout_seed(seed: u64, step: usize, pass: u64) -> Mode {
    Mode::Train {
        seed: mix_seed(mix_seed(seed, STREAM_STEP), 4 * step as u64 + pass),
    }
}

/// Clean cross-entropy plus, when `delta` is given, the cross-entropy at the
/// perturbed embedding. Returns `(clean, adversarial, total)`.
pub(crate) fn supervised_loss<'g>(
    model: &TransformerClassifier,
    params: &BoundParams<'g>,
    batch: &Batch,
    labels: &[usize],
    delta: Option<&Perturbation>,
    modes: (Mode, Mode),
) -> Result<(Tensor<'g>, Option<Tensor<'g>>, Tensor<'g>)> {
    let clean = model
        .forward(params, batch, modes.0, false)?
        .logits
        .cross_entropy(labels)?;
    match delta {
        Some(d) => {
            let adv = adversarial_loss(model, params, batch, labels, d, modes.1)?;
            Ok((clean, Some(adv), clean.add(adv)?))
        }
        None => Ok((clean, None, clean)),
    }
}

fn apply_update(
    model: &mut TransformerClassifier,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    config: &TrainConfig,
    step: usize,
) -> Result<()> {
    for (p, g) in model.params().iter().zip(grads) {
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "step {step}: non-finite gradient {} in {} at index {j}",
                g[j], p.name
            )));
        }
    }
    let mut slices: Vec<&mut [f64]> = model
        .params_mut()
        .iter_mut()
        .map(|p| Arc::make_mut(&mut p.value).as_mut_slice())
        .collect();
    adam_step(&mut slices, grads, state, config.learning_rate, &config.adam)
}

fn labeled_batch(data: &[Labeled], idx: &[usize]) -> (Batch, Vec<usize>) {
    let batch = Batch::new(idx.iter().map(|&i| &data[i].seq));
    (batch, idx.iter().map(|&i| data[i].label).collect())
}

fn should_eval(step: usize, config: &TrainConfig) -> bool {
    step == config.steps || (config.eval_every > 0 && step % config.eval_every == 0)
}

/// Supervised training, with an FGM or PGD adversarial term when
/// `config.adv` asks for one. Metrics are computed on `validation`, or on
/// the training data when none is given.
pub fn train_supervised(
    model: &mut TransformerClassifier,
    data: &[Labeled],
    validation: Option<&[Labeled]>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if config.adv.method == AdvMethod::Vat {
        return Err(Error::Config(
            "virtual adversarial training needs train_semisupervised".into(),
        ));
    }
    run(model, data, &[], validation, config)
}

/// Cross-entropy on labeled batches plus `lds_weight` times the smoothness
/// term on batches drawn from labeled and unlabeled texts. The reference
/// distribution is taken from the parameters at the start of each step.
pub fn train_semisupervised(
    model: &mut TransformerClassifier,
    labeled: &[Labeled],
    unlabeled: &[TokenSeq],
    validation: Option<&[Labeled]>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if config.adv.method != AdvMethod::Vat {
        return Err(Error::Config(format!(
            "semi-supervised training needs method vat, got {:?}",
            config.adv.method
        )));
    }
    run(model, labeled, unlabeled, validation, config)
}

fn run(
    model: &mut TransformerClassifier,
    data: &[Labeled],
    unlabeled: &[TokenSeq],
    validation: Option<&[Labeled]>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(bad) = data.iter().find(|e| e.label >= model.config().num_classes) {
        return Err(Error::Data(format!(
            "label {} outside {} classes",
            bad.label,
            model.config().num_classes
        )));
    }
    let mut history = TrainHistory::default();
    let vat = config.adv.method == AdvMethod::Vat && config.adv.active() && config.lds_weight > 0.0;
    if config.adv.method == AdvMethod::Vat && unlabeled.is_empty() {
        history
            .warnings
            .push("no unlabeled texts; smoothness term uses labeled texts only".into());
    }
    let pool: Vec<&TokenSeq> = data.iter().map(|e| &e.seq).chain(unlabeled).collect();
    let mut sampler = EpochSampler::new(data.len(), mix_seed(config.seed, STREAM_LABELED));
    let mut star_sampler = EpochSampler::new(pool.len(), mix_seed(config.seed, STREAM_UNLABELED));
    let mut state = AdamState::new(model.params().iter().map(|p| p.value.len()));

    for step in 1..=config.steps {
        let idx = sampler.next_batch(config.batch_size);
        let (batch, labels) = labeled_batch(data, &idx);
        let delta = match config.adv.method {
            AdvMethod::Fgm if config.adv.active() => Some(fgm_attack(model, &batch, &labels, config.adv.epsilon)?),
            AdvMethod::Pgd if config.adv.active() => Some(pgd_perturb(model, &batch, &labels, &config.adv)?),
            _ => None,
        };
        let star = vat
            .then(|| -> Result<_> {
                let sidx = star_sampler.next_batch(config.batch_size);
                let sb = Batch::new(sidx.iter().map(|&i| pool[i]));
                let targets = virtual_targets(model, &sb)?;
                let seed = mix_seed(mix_seed(config.seed, STREAM_STEP), 4 * step as u64 + 3);
                let r = vat_perturb_with_targets(model, &sb, &targets, &config.adv, seed)?;
                Ok((sb, targets, r))
            })
            .transpose()?;

        let g = Graph::new();
        let p = model.bind(&g)?;
        let modes = (dropout_seed(config.seed, step, 0), dropout_seed(config.seed, step, 1));
        let (clean, adv, mut total) = supervised_loss(model, &p, &batch, &labels, delta.as_ref(), modes)?;
        let mut lds_value = 0.0;
        if let Some((sb, targets, r)) = &star {
            let lds = compute_lds(model, &p, sb, targets, r, dropout_seed(config.seed, step, 2))?;
            lds_value = lds.item();
            total = total.add(lds.scale(config.lds_weight)?)?;
        }
        g.backward(total)?;
        let grads = p.grads();
        let losses = [clean.item(), adv.map_or(0.0, |a| a.item()), lds_value];
        drop(p);
        drop(g);
        apply_update(model, &grads, &mut state, config, step)?;
        history.losses.push(losses);

        if should_eval(step, config) {
            let metrics = evaluate(model, validation.unwrap_or(data))?;
            history.records.push(HistoryRecord {
                step,
                clean_loss: losses[0],
                adv_loss: losses[1],
                lds: losses[2],
                metrics,
            });
        }
    }
    Ok(history)
}

/// Metrics of the arg-max predictions, class 1 positive.
pub fn evaluate(model: &TransformerClassifier, data: &[Labeled]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let seqs: Vec<TokenSeq> = data.iter().map(|e| e.seq.clone()).collect();
    let preds = model.predict(&seqs)?;
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    Metrics::from_predictions(&labels, &preds)
}

#[cfg(test)]
mod tests;
