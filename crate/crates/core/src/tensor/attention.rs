//! Fused multi-head scaled dot-product attention over packed sequences.
//!
//! Several sequences are stacked row-wise into one `[rows, dim]` matrix; a
//! [`SeqLayout`] records where each sequence starts. Attention never crosses
//! sequence boundaries, and keys with a false mask entry receive probability
//! exactly zero (the equivalent of a negative-infinity score).

use std::sync::Arc;

use super::kernels::{masked_softmax_row, softmax_row_backward};
use super::{domain_err, dropout_mask, dim_err, Graph, Op, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    segments: Vec<Segment>,
    key_mask: Vec<bool>,
}

impl SeqLayout {
    /// Consecutive sequences with every position attendable.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let masks: Vec<Vec<bool>> = lengths.iter().map(|&n| vec![true; n]).collect();
        Self::from_masks(&masks)
    }

    /// Consecutive sequences whose key masks are given (true = real token).
    pub fn from_masks(masks: &[Vec<bool>]) -> Self {
        let mut segments = Vec::with_capacity(masks.len());
        let mut key_mask = Vec::new();
        for m in masks {
            segments.push(Segment {
                start: key_mask.len(),
                len: m.len(),
            });
            key_mask.extend_from_slice(m);
        }
        Self { segments, key_mask }
    }

    pub fn rows(&self) -> usize {
        self.key_mask.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn key_mask(&self) -> &[bool] {
        &self.key_mask
    }

    /// Offsets of each segment's block in a probability buffer holding
    /// `heads` square matrices per segment; the last entry is the total size.
    fn prob_offsets(&self, heads: usize) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0;
        for s in &self.segments {
            offsets.push(acc);
            acc += heads * s.len * s.len;
        }
        offsets.push(acc);
        offsets
    }
}

/// Attention probabilities (before dropout) recorded by one attention op.
#[derive(Debug, Clone)]
pub struct AttentionProbs {
    probs: Arc<Vec<f64>>,
    offsets: Vec<usize>,
    layout: Arc<SeqLayout>,
    heads: usize,
}

impl AttentionProbs {
    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn layout(&self) -> &SeqLayout {
        &self.layout
    }

    /// Row-major `len x len` matrix for one segment and head.
    pub fn matrix(&self, segment: usize, head: usize) -> &[f64] {
        let n = self.layout.segments[segment].len;
        let base = self.offsets[segment] + head * n * n;
        &self.probs[base..base + n * n]
    }
}

pub(crate) struct AttentionSaved {
    q: usize,
    k: usize,
    v: usize,
    layout: Arc<SeqLayout>,
    offsets: Vec<usize>,
    heads: usize,
    probs: Arc<Vec<f64>>,
    dropout: Option<Vec<f64>>,
}

impl AttentionSaved {
    pub(crate) fn parents(&self) -> [usize; 3] {
        [self.q, self.k, self.v]
    }
}

impl Graph {
    /// Multi-head attention `softmax(Q K^T / sqrt(dh)) V` per sequence and head,
    /// with heads occupying consecutive column blocks of width `dim / heads`.
    /// Optional dropout `(rate, seed)` is applied to the probabilities.
    pub fn attention<'g>(
        &'g self,
        q: Tensor<'g>,
        k: Tensor<'g>,
        v: Tensor<'g>,
        layout: &Arc<SeqLayout>,
        heads: usize,
        dropout: Option<(f64, u64)>,
    ) -> Result<(Tensor<'g>, AttentionProbs)> {
        let shape = q.shape();
        let (rows, dim) = match shape.as_slice() {
            [r, d] => (*r, *d),
            _ => return Err(dim_err("attention", format!("query shape {shape:?}"))),
        };
        if k.shape() != shape || v.shape() != shape {
            return Err(dim_err(
                "attention",
                format!("q {:?} k {:?} v {:?}", shape, k.shape(), v.shape()),
            ));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(dim_err("attention", format!("{dim} not divisible into {heads} heads")));
        }
        if layout.rows() != rows {
            return Err(dim_err(
                "attention",
                format!("layout covers {} rows, input has {rows}", layout.rows()),
            ));
        }
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let offsets = layout.prob_offsets(heads);
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        let mut probs = vec![0.0; offsets[offsets.len() - 1]];
        let mut scores = Vec::new();
        for (si, seg) in layout.segments.iter().enumerate() {
            let n = seg.len;
            let km = &layout.key_mask[seg.start..seg.start + n];
            if n > 0 && !km.iter().any(|&m| m) {
                return Err(domain_err("attention", format!("segment {si} has no unmasked key")));
            }
            scores.resize(n, 0.0);
            for h in 0..heads {
                let col = h * dh;
                for i in 0..n {
                    let qi = &qv[(seg.start + i) * dim + col..][..dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        if km[j] {
                            let kj = &kv[(seg.start + j) * dim + col..][..dh];
                            *s = scale * dot(qi, kj);
                        }
                    }
                    let base = offsets[si] + h * n * n + i * n;
                    masked_softmax_row(&scores, km, &mut probs[base..base + n]);
                }
            }
        }
        let mask = match dropout {
            Some((rate, _)) if !(0.0..1.0).contains(&rate) => {
                return Err(domain_err("attention", format!("dropout rate {rate}")))
            }
            Some((rate, seed)) if rate > 0.0 => {
                self.stochastic.set(true);
                Some(dropout_mask(probs.len(), rate, seed))
            }
            _ => None,
        };
        let mut out = vec![0.0; rows * dim];
        for (si, seg) in layout.segments.iter().enumerate() {
            let n = seg.len;
            for h in 0..heads {
                let col = h * dh;
                for i in 0..n {
                    let base = offsets[si] + h * n * n + i * n;
                    let o = &mut out[(seg.start + i) * dim + col..][..dh];
                    for j in 0..n {
                        let mut p = probs[base + j];
                        if let Some(m) = &mask {
                            p *= m[base + j];
                        }
                        if p != 0.0 {
                            let vj = &vv[(seg.start + j) * dim + col..][..dh];
                            for (ot, vt) in o.iter_mut().zip(vj) {
                                *ot += p * vt;
                            }
                        }
                    }
                }
            }
        }
        super::check_finite("attention", &out)?;
        let probs = Arc::new(probs);
        let layout = Arc::clone(layout);
        let rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
        let record = AttentionProbs {
            probs: Arc::clone(&probs),
            offsets: offsets.clone(),
            layout: Arc::clone(&layout),
            heads,
        };
        let saved = AttentionSaved {
            q: q.id(),
            k: k.id(),
            v: v.id(),
            layout,
            offsets,
            heads,
            probs,
            dropout: mask,
        };
        let t = self.push(out, vec![rows, dim], Op::Attention(saved), rg);
        Ok((t, record))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulates gradients of q, k, v given the output gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    saved: &AttentionSaved,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    gout: &[f64],
    gq: &mut [f64],
    gk: &mut [f64],
    gv: &mut [f64],
) {
    let dim = q.len() / saved.layout.rows().max(1);
    let dh = dim / saved.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = Vec::new();
    for (si, seg) in saved.layout.segments.iter().enumerate() {
        let n = seg.len;
        dp.resize(n, 0.0);
        for h in 0..saved.heads {
            let col = h * dh;
            for i in 0..n {
                let base = saved.offsets[si] + h * n * n + i * n;
                let p = &saved.probs[base..base + n];
                let go = &gout[(seg.start + i) * dim + col..][..dh];
                for j in 0..n {
                    let m = saved.dropout.as_ref().map_or(1.0, |m| m[base + j]);
                    if p[j] == 0.0 || m == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let rv = (seg.start + j) * dim + col;
                    let pd = p[j] * m;
                    for t in 0..dh {
                        gv[rv + t] += pd * go[t];
                    }
                    dp[j] = m * dot(go, &v[rv..rv + dh]);
                }
                softmax_row_backward(p, &mut dp);
                let rq = (seg.start + i) * dim + col;
                for j in 0..n {
                    let ds = dp[j] * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let rk = (seg.start + j) * dim + col;
                    for t in 0..dh {
                        gq[rq + t] += ds * k[rk + t];
                        gk[rk + t] += ds * q[rq + t];
                    }
                }
            }
        }
    }
}
