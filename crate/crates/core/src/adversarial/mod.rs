//! Embedding-space perturbations and the losses built on them.
//!
//! Every perturbation is per sequence: each sequence of a packed [`Batch`]
//! gets its own block of rows whose L2 norm is controlled independently.
//! Direction searches run in evaluation mode against frozen parameters, so
//! they never touch the model or the clean embeddings.

use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, BoundParams, Mode, TransformerClassifier};
use crate::tensor::{Graph, Tensor};

/// Gradient norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Relative scale of the VAT finite-difference step: `xi = 1e-6 * sqrt(rows * dim)`.
pub const VAT_XI_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvMethod {
    #[default]
    None,
    Fgm,
    Pgd,
    Vat,
}

impl FromStr for AdvMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "fgm" => Ok(Self::Fgm),
            "pgd" => Ok(Self::Pgd),
            "vat" => Ok(Self::Vat),
            _ => Err(Error::Config(format!("unknown adversarial method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub method: AdvMethod,
    /// Perturbation radius per sequence. Zero switches the adversarial
    /// branch off.
    pub epsilon: f64,
    pub pgd_steps: usize,
    /// Defaults to `epsilon / 4`.
    pub pgd_step_size: Option<f64>,
    /// Defaults to `1e-6 * sqrt(rows * dim)` per sequence.
    pub vat_xi: Option<f64>,
    pub vat_power_iters: usize,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            method: AdvMethod::None,
            epsilon: 1.0,
            pgd_steps: 3,
            pgd_step_size: None,
            vat_xi: None,
            vat_power_iters: 1,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be finite and >= 0", self.epsilon)));
        }
        if self.pgd_steps == 0 {
            return Err(Error::Config("pgd_steps must be >= 1".into()));
        }
        if self.pgd_step_size.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::Config("pgd_step_size must be > 0".into()));
        }
        if self.vat_xi.is_some_and(|x| !(x > 0.0)) {
            return Err(Error::Config("vat_xi must be > 0".into()));
        }
        if self.vat_power_iters == 0 {
            return Err(Error::Config("vat_power_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.pgd_step_size.unwrap_or(self.epsilon / 4.0)
    }

    /// Whether an adversarial or virtual adversarial term is trained.
    pub fn active(&self) -> bool {
        self.method != AdvMethod::None && self.epsilon > 0.0
    }
}

/// Perturbation of the packed embedding rows of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    values: Vec<f64>,
    dim: usize,
    spans: Vec<Range<usize>>,
}

impl Perturbation {
    pub fn zeros(batch: &Batch, dim: usize) -> Self {
        let spans: Vec<_> = (0..batch.len()).map(|i| batch.span(i)).collect();
        Self {
            values: vec![0.0; batch.rows() * dim],
            dim,
            spans,
        }
    }

    /// Independent Gaussian direction per sequence, rescaled to norm `radius`.
    pub fn random(batch: &Batch, dim: usize, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(batch, dim);
        p.values.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        for i in 0..p.len() {
            let block = p.block_mut(i);
            normalize(block);
            block.iter_mut().for_each(|v| *v *= radius);
        }
        p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `[rows, dim]`.
    pub fn shape(&self) -> [usize; 2] {
        [self.values.len() / self.dim.max(1), self.dim]
    }

    /// Values of sequence `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        let r = &self.spans[i];
        &self.values[r.start * self.dim..r.end * self.dim]
    }

    fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = &self.spans[i];
        &mut self.values[r.start * self.dim..r.end * self.dim]
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// L2 norm of each sequence's block.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len()).map(|i| l2(self.block(i))).collect()
    }

    /// `embeddings + self`, with the perturbation held constant.
    pub fn apply<'g>(&self, embeddings: Tensor<'g>) -> Result<Tensor<'g>> {
        let r = embeddings.graph().constant(self.values.clone(), &self.shape())?;
        Ok(embeddings.add(r)?)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `epsilon * g / ||g||`, or zeros when `||g|| <= 1e-12`.
///
/// ```
/// let d = tagvat::adversarial::fgm_perturb(&[3.0, 4.0], 1.0);
/// assert_eq!(d, [0.6, 0.8]);
/// ```
pub fn fgm_perturb(grad: &[f64], epsilon: f64) -> Vec<f64> {
    let n = l2(grad);
    if !(n > DEGENERATE_NORM) {
        return vec![0.0; grad.len()];
    }
    grad.iter().map(|g| g * epsilon / n).collect()
}

/// Rescales `delta` onto the ball of radius `epsilon` when it lies outside.
fn project(delta: &mut [f64], epsilon: f64) {
    let n = l2(delta);
    if n > epsilon * (1.0 + 1e-12) {
        let s = epsilon / n;
        delta.iter_mut().for_each(|d| *d *= s);
    }
}

fn check_labels(batch: &Batch, labels: &[usize]) -> Result<()> {
    if labels.len() != batch.len() {
        return Err(Error::Data(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// Summed cross-entropy at `X + delta` (evaluation mode) and its gradient
/// with respect to the embedding rows.
pub fn loss_and_embedding_grad(
    model: &TransformerClassifier,
    batch: &Batch,
    labels: &[usize],
    delta: &Perturbation,
) -> Result<(f64, Vec<f64>)> {
    check_labels(batch, labels)?;
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    let clean = model.embed(&p, batch, Mode::Eval)?;
    let r = g.leaf(delta.values.clone(), &delta.shape())?;
    let logits = model
        .forward_from_embeddings(&p, clean.add(r)?, batch, Mode::Eval, false)?
        .logits;
    let loss = logits.cross_entropy(labels)?.scale(batch.len() as f64)?;
    g.backward(loss)?;
    Ok((loss.item(), r.take_grad().expect("leaf gradient")))
}

/// One fast-gradient step from the clean input: [`fgm_perturb`] applied to
/// each sequence's loss gradient.
pub fn fgm_attack(
    model: &TransformerClassifier,
    batch: &Batch,
    labels: &[usize],
    epsilon: f64,
) -> Result<Perturbation> {
    let mut delta = Perturbation::zeros(batch, model.config().hidden);
    let (_, grad) = loss_and_embedding_grad(model, batch, labels, &delta)?;
    let probe = Perturbation {
        values: grad,
        ..delta.clone()
    };
    for i in 0..delta.len() {
        let step = fgm_perturb(probe.block(i), epsilon);
        delta.block_mut(i).copy_from_slice(&step);
    }
    Ok(delta)
}

/// `K` normalized gradient steps of size `alpha`, each followed by a radial
/// projection onto the `epsilon`-ball around the clean embedding. A sequence
/// whose gradient vanishes keeps its current perturbation.
pub fn pgd_perturb(
    model: &TransformerClassifier,
    batch: &Batch,
    labels: &[usize],
    config: &AdvConfig,
) -> Result<Perturbation> {
    config.validate()?;
    let (eps, alpha) = (config.epsilon, config.step_size());
    let mut delta = Perturbation::zeros(batch, model.config().hidden);
    let mut live = vec![true; batch.len()];
    for t in 0..config.pgd_steps {
        if !live.iter().any(|&l| l) {
            break;
        }
        let (_, grad) = loss_and_embedding_grad(model, batch, labels, &delta)?;
        let probe = Perturbation {
            values: grad,
            ..delta.clone()
        };
        for (i, alive) in live.iter_mut().enumerate() {
            if !*alive {
                continue;
            }
            let gi = probe.block(i);
            if !(l2(gi) > DEGENERATE_NORM) {
                *alive = false;
                continue;
            }
            let step = fgm_perturb(gi, alpha);
            let block = delta.block_mut(i);
            if t == 0 {
                block.copy_from_slice(&step);
            } else {
                block.iter_mut().zip(&step).for_each(|(d, s)| *d += s);
            }
            project(block, eps);
        }
    }
    Ok(delta)
}

/// Class probabilities of the unperturbed batch in evaluation mode, used
/// as the fixed reference distribution of the smoothness terms. `[B, C]`
/// row-major.
pub fn virtual_targets(model: &TransformerClassifier, batch: &Batch) -> Result<Vec<f64>> {
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    Ok(model.forward(&p, batch, Mode::Eval, false)?.logits.softmax(1)?.to_vec())
}

/// Summed `KL(targets || p(. | X + r))` in evaluation mode and its gradient
/// with respect to `r`.
fn divergence_and_grad(
    model: &TransformerClassifier,
    batch: &Batch,
    targets: &[f64],
    r: &Perturbation,
) -> Result<(f64, Vec<f64>)> {
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    let clean = model.embed(&p, batch, Mode::Eval)?;
    let rt = g.leaf(r.values.clone(), &r.shape())?;
    let q = model
        .forward_from_embeddings(&p, clean.add(rt)?, batch, Mode::Eval, false)?
        .logits
        .softmax(1)?;
    let target = g.constant(targets.to_vec(), &q.shape())?;
    let kl = target.kl_divergence(q)?.scale(batch.len() as f64)?;
    g.backward(kl)?;
    Ok((kl.item(), rt.take_grad().expect("leaf gradient")))
}

/// Virtual adversarial direction by power iteration: starting from a random
/// unit direction `d` per sequence, repeatedly set `d` to the normalized
/// gradient of `KL(p(.|X) || p(.|X + xi d))`. Returns `epsilon * d`; where the
/// gradient vanishes the random start direction is used.
pub fn vat_perturb(
    model: &TransformerClassifier,
    batch: &Batch,
    config: &AdvConfig,
    seed: u64,
) -> Result<Perturbation> {
    config.validate()?;
    let targets = virtual_targets(model, batch)?;
    vat_perturb_with_targets(model, batch, &targets, config, seed)
}

pub fn vat_perturb_with_targets(
    model: &TransformerClassifier,
    batch: &Batch,
    targets: &[f64],
    config: &AdvConfig,
    seed: u64,
) -> Result<Perturbation> {
    let dim = model.config().hidden;
    let start = Perturbation::random(batch, dim, 1.0, seed);
    let xi: Vec<f64> = (0..batch.len())
        .map(|i| {
            config
                .vat_xi
                .unwrap_or_else(|| VAT_XI_SCALE * ((batch.span(i).len() * dim) as f64).sqrt())
        })
        .collect();
    let mut dir = start.clone();
    let mut live = vec![true; batch.len()];
    for _ in 0..config.vat_power_iters {
        let mut probe = dir.clone();
        for (i, x) in xi.iter().enumerate() {
            probe.block_mut(i).iter_mut().for_each(|v| *v *= x);
        }
        let (_, grad) = divergence_and_grad(model, batch, targets, &probe)?;
        probe.values = grad;
        for (i, alive) in live.iter_mut().enumerate() {
            if !*alive {
                continue;
            }
            let gi = probe.block(i);
            if l2(gi) > 0.0 && gi.iter().all(|v| v.is_finite()) {
                dir.block_mut(i).copy_from_slice(gi);
                normalize(dir.block_mut(i));
            } else {
                *alive = false;
                dir.block_mut(i).copy_from_slice(start.block(i));
            }
        }
    }
    dir.values.iter_mut().for_each(|v| *v *= config.epsilon);
    Ok(dir)
}

fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Local distributional smoothness: mean over sequences of
/// `KL(targets || p(. | X + r))`. Gradients reach the parameters through
/// the perturbed branch only; `targets` and `r` are constants.
pub fn compute_lds<'g>(
    model: &TransformerClassifier,
    params: &BoundParams<'g>,
    batch: &Batch,
    targets: &[f64],
    r: &Perturbation,
    mode: Mode,
) -> Result<Tensor<'g>> {
    let emb = model.embed(params, batch, mode)?;
    let q = model
        .forward_from_embeddings(params, r.apply(emb)?, batch, mode, false)?
        .logits
        .softmax(1)?;
    let target = q.graph().constant(targets.to_vec(), &q.shape())?;
    Ok(target.kl_divergence(q)?)
}

/// [`compute_lds`] evaluated in evaluation mode, as a plain number.
pub fn lds_value(
    model: &TransformerClassifier,
    batch: &Batch,
    targets: &[f64],
    r: &Perturbation,
) -> Result<f64> {
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    Ok(compute_lds(model, &p, batch, targets, r, Mode::Eval)?.item())
}

/// Mean cross-entropy of the logits at `X + delta` against `labels`.
pub fn adversarial_loss<'g>(
    model: &TransformerClassifier,
    params: &BoundParams<'g>,
    batch: &Batch,
    labels: &[usize],
    delta: &Perturbation,
    mode: Mode,
) -> Result<Tensor<'g>> {
    check_labels(batch, labels)?;
    let emb = model.embed(params, batch, mode)?;
    let logits = model
        .forward_from_embeddings(params, delta.apply(emb)?, batch, mode, false)?
        .logits;
    Ok(logits.cross_entropy(labels)?)
}

#[cfg(test)]
mod tests;
