//! Transformer-encoder classifier.
//!
//! Sequences are packed row-wise into a [`Batch`] (padding trimmed by
//! default), embedded, passed through the encoder stack, pooled at the
//! `[CLS]` row and classified by a small dense head. The embedding output is
//! an explicit entry point ([`TransformerClassifier::forward_from_embeddings`])
//! so adversarial perturbations and attributions can act on it directly.

mod checkpoint;
mod config;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{AttentionProbs, Graph, SeqLayout, Tensor, LAYER_NORM_EPS};
use crate::text::{Sentiment, TokenSeq};

pub use config::ModelConfig;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

const PARAMS_PER_LAYER: usize = 16;

/// Whether dropout is active. Training mode carries the seed from which all
/// dropout masks of one forward pass are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

impl Mode {
    fn dropout(self, rate: f64, site: u64) -> Option<(f64, u64)> {
        match self {
            Mode::Train { seed } if rate > 0.0 => Some((rate, mix_seed(seed, site))),
            _ => None,
        }
    }
}

/// SplitMix64 finalizer over `seed + stream`; used to fan one seed out into
/// independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
}

/// Several token sequences packed into one `[rows, hidden]` layout.
#[derive(Debug, Clone)]
pub struct Batch {
    ids: Vec<usize>,
    positions: Vec<usize>,
    layout: Arc<SeqLayout>,
    cls_rows: Vec<usize>,
}

impl Batch {
    /// Packs the real (non-padding) positions of each sequence.
    pub fn new<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        Self::build(seqs, true)
    }

    /// Packs every position, padding included; padded keys are masked.
    pub fn padded<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        Self::build(seqs, false)
    }

    fn build<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>, trim: bool) -> Self {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut masks = Vec::new();
        let mut cls_rows = Vec::new();
        for s in seqs {
            let n = if trim { s.real_len() } else { s.max_len() };
            cls_rows.push(ids.len());
            ids.extend_from_slice(&s.ids[..n]);
            positions.extend(0..n);
            masks.push(s.mask[..n].to_vec());
        }
        Self {
            ids,
            positions,
            layout: Arc::new(SeqLayout::from_masks(&masks)),
            cls_rows,
        }
    }

    /// Number of sequences.
    pub fn len(&self) -> usize {
        self.cls_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cls_rows.is_empty()
    }

    /// Total packed rows.
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn layout(&self) -> &SeqLayout {
        &self.layout
    }

    /// Packed row range of sequence `i`.
    pub fn span(&self, i: usize) -> std::ops::Range<usize> {
        let s = self.layout.segments()[i];
        s.start..s.start + s.len
    }
}

/// Graph handles for every parameter, in [`TransformerClassifier::params`] order.
pub struct BoundParams<'g> {
    tensors: Vec<Tensor<'g>>,
}

impl<'g> BoundParams<'g> {
    pub fn get(&self, i: usize) -> Tensor<'g> {
        self.tensors[i]
    }

    /// Gradients after `backward`, one vector per parameter.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.take_grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

pub struct Forward<'g> {
    /// `[batch, classes]`.
    pub logits: Tensor<'g>,
    /// Attention probabilities per layer, when collection was requested.
    pub attention: Option<Vec<AttentionProbs>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerClassifier {
    config: ModelConfig,
    params: Vec<Param>,
}

struct Layer {
    base: usize,
}

impl Layer {
    fn idx(&self, k: usize) -> usize {
        self.base + k
    }
}

impl TransformerClassifier {
    /// Deterministic initialization from `config.seed`: weights and
    /// embeddings `N(0, 0.02^2)`, layer-norm gains 1, biases 0.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let value = if name.ends_with(".gain") {
                    vec![1.0; n]
                } else if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                Param {
                    name,
                    shape,
                    value: Arc::new(value),
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Model from explicit parameters, checked against the names and shapes
    /// of [`ModelConfig::parameter_shapes`].
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, config expects {}",
                params.len(),
                expected.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if *name != p.name || *shape != p.shape || p.value.len() != shape.iter().product::<usize>() {
                return Err(Error::Data(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name, p.shape
                )));
            }
            if p.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("parameter {name} has non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Parameter count by enumeration of the allocated tensors.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind<'g>(&self, g: &'g Graph) -> Result<BoundParams<'g>> {
        let tensors = self
            .params
            .iter()
            .map(|p| g.shared_leaf(Arc::clone(&p.value), &p.shape))
            .collect::<Result<_, _>>()?;
        Ok(BoundParams { tensors })
    }

    /// Binds every parameter as a constant: gradients flow only to inputs.
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> Result<BoundParams<'g>> {
        let tensors = self
            .params
            .iter()
            .map(|p| g.shared_constant(Arc::clone(&p.value), &p.shape))
            .collect::<Result<_, _>>()?;
        Ok(BoundParams { tensors })
    }

    /// Like [`bind`](Self::bind) with parameter `index` replaced by `tensor`.
    pub fn bind_with<'g>(&self, g: &'g Graph, index: usize, tensor: Tensor<'g>) -> Result<BoundParams<'g>> {
        if tensor.shape() != self.params[index].shape {
            return Err(Error::Tensor(crate::tensor::TensorError::Dimension {
                op: "bind_with",
                detail: format!("{:?} vs {:?}", tensor.shape(), self.params[index].shape),
            }));
        }
        let mut bound = self.bind(g)?;
        bound.tensors[index] = tensor;
        Ok(bound)
    }

    fn layer(&self, l: usize) -> Layer {
        Layer {
            base: 4 + PARAMS_PER_LAYER * l,
        }
    }

    fn head_base(&self) -> usize {
        4 + PARAMS_PER_LAYER * self.config.layers
    }

    fn check_ids(&self, batch: &Batch) -> Result<()> {
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Tensor(crate::tensor::TensorError::Index {
                op: "embed",
                index: bad,
                size: self.config.vocab_size,
            }));
        }
        if let Some(&p) = batch.positions.iter().max() {
            if p >= self.config.max_len {
                return Err(Error::Config(format!(
                    "sequence of length {} exceeds max_len {}",
                    p + 1,
                    self.config.max_len
                )));
            }
        }
        Ok(())
    }

    /// Token plus position embeddings, layer-normed, with dropout in training
    /// mode. Output is `[batch.rows(), hidden]`.
    pub fn embed<'g>(&self, p: &BoundParams<'g>, batch: &Batch, mode: Mode) -> Result<Tensor<'g>> {
        self.check_ids(batch)?;
        let g = p.get(0).graph();
        let tok = g.embedding_lookup(p.get(0), &batch.ids)?;
        let pos = g.embedding_lookup(p.get(1), &batch.positions)?;
        let x = tok.add(pos)?.layer_norm(p.get(2), p.get(3), LAYER_NORM_EPS)?;
        Ok(match mode.dropout(self.config.dropout, 0) {
            Some((rate, seed)) => x.dropout(rate, seed)?,
            None => x,
        })
    }

    /// Embedding output with the token term removed (positions only), in
    /// evaluation mode. Used as an attribution baseline.
    pub fn embed_positions_only<'g>(&self, p: &BoundParams<'g>, batch: &Batch) -> Result<Tensor<'g>> {
        self.check_ids(batch)?;
        let g = p.get(0).graph();
        let pos = g.embedding_lookup(p.get(1), &batch.positions)?;
        Ok(pos.layer_norm(p.get(2), p.get(3), LAYER_NORM_EPS)?)
    }

    pub fn forward_from_embeddings<'g>(
        &self,
        p: &BoundParams<'g>,
        embeddings: Tensor<'g>,
        batch: &Batch,
        mode: Mode,
        collect_attention: bool,
    ) -> Result<Forward<'g>> {
        let cfg = &self.config;
        if embeddings.shape() != [batch.rows(), cfg.hidden] {
            return Err(Error::Tensor(crate::tensor::TensorError::Dimension {
                op: "forward_from_embeddings",
                detail: format!("{:?} for {} rows of width {}", embeddings.shape(), batch.rows(), cfg.hidden),
            }));
        }
        let g = embeddings.graph();
        let mut x = embeddings;
        let mut attention = collect_attention.then(Vec::new);
        for l in 0..cfg.layers {
            let ly = self.layer(l);
            let site = 1 + 3 * l as u64;
            let q = x.matmul(p.get(ly.idx(0)))?.add(p.get(ly.idx(1)))?;
            let k = x.matmul(p.get(ly.idx(2)))?.add(p.get(ly.idx(3)))?;
            let v = x.matmul(p.get(ly.idx(4)))?.add(p.get(ly.idx(5)))?;
            let (ctx, probs) = g.attention(q, k, v, &batch.layout, cfg.heads, mode.dropout(cfg.dropout, site))?;
            if let Some(a) = attention.as_mut() {
                a.push(probs);
            }
            let mut a = ctx.matmul(p.get(ly.idx(6)))?.add(p.get(ly.idx(7)))?;
            if let Some((rate, seed)) = mode.dropout(cfg.dropout, site + 1) {
                a = a.dropout(rate, seed)?;
            }
            x = x.add(a)?.layer_norm(p.get(ly.idx(8)), p.get(ly.idx(9)), LAYER_NORM_EPS)?;
            let mut f = x
                .matmul(p.get(ly.idx(10)))?
                .add(p.get(ly.idx(11)))?
                .gelu()?
                .matmul(p.get(ly.idx(12)))?
                .add(p.get(ly.idx(13)))?;
            if let Some((rate, seed)) = mode.dropout(cfg.dropout, site + 2) {
                f = f.dropout(rate, seed)?;
            }
            x = x.add(f)?.layer_norm(p.get(ly.idx(14)), p.get(ly.idx(15)), LAYER_NORM_EPS)?;
        }
        let h = self.head_base();
        let mut z = x
            .select_rows(&batch.cls_rows)?
            .matmul(p.get(h))?
            .add(p.get(h + 1))?
            .tanh()?;
        let mut next = h + 2;
        if cfg.head_layers == 2 {
            z = z.matmul(p.get(next))?.add(p.get(next + 1))?.tanh()?;
            next += 2;
        }
        let logits = z.matmul(p.get(next))?.add(p.get(next + 1))?;
        Ok(Forward { logits, attention })
    }

    pub fn forward<'g>(
        &self,
        p: &BoundParams<'g>,
        batch: &Batch,
        mode: Mode,
        collect_attention: bool,
    ) -> Result<Forward<'g>> {
        let emb = self.embed(p, batch, mode)?;
        self.forward_from_embeddings(p, emb, batch, mode, collect_attention)
    }

    /// Class probabilities of every sequence, evaluation mode.
    pub fn predict_proba_batch(&self, seqs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            let g = Graph::new();
            let p = self.bind_frozen(&g)?;
            let batch = Batch::new(chunk);
            let probs = self.forward(&p, &batch, Mode::Eval, false)?.logits.softmax(1)?.value();
            out.extend(probs.chunks(self.config.num_classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn predict_proba(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        Ok(self.predict_proba_batch(std::slice::from_ref(seq))?.remove(0))
    }

    /// Arg-max class of every sequence.
    pub fn predict(&self, seqs: &[TokenSeq]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba_batch(seqs)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Three-way sentiment from the positive-class probability `x`.
pub fn sentiment_class(x: f64) -> Result<Sentiment> {
    Sentiment::from_probability(x)
}
