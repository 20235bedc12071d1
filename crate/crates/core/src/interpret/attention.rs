use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Batch, Mode, TransformerClassifier};
use crate::tensor::Graph;
use crate::text::{is_sentiment_tag, TokenSeq};

/// Attention probabilities of every layer and head over the real tokens of
/// one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionGrid {
    pub tokens: Vec<String>,
    pub layers: usize,
    pub heads: usize,
    /// `matrices[layer][head]` is `n x n`, row-major; row `i` is the
    /// distribution of token `i` over the tokens it attends to.
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl AttentionGrid {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn matrix(&self, layer: usize, head: usize) -> &[f64] {
        &self.matrices[layer][head]
    }

    /// Position of the first sentiment tag token, if any.
    pub fn sentiment_tag_position(&self) -> Option<usize> {
        self.tokens.iter().position(|t| is_sentiment_tag(t))
    }
}

/// Runs one evaluation-mode forward pass and keeps all `L x H` attention
/// matrices, cropped to the real tokens.
pub fn extract_attention(model: &TransformerClassifier, seq: &TokenSeq) -> Result<AttentionGrid> {
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    let batch = Batch::new([seq]);
    let out = model.forward(&p, &batch, Mode::Eval, true)?;
    let probs = out.attention.expect("attention requested");
    let heads = model.config().heads;
    let matrices = probs
        .iter()
        .map(|layer| (0..heads).map(|h| layer.matrix(0, h).to_vec()).collect())
        .collect();
    Ok(AttentionGrid {
        tokens: seq.tokens.clone(),
        layers: model.config().layers,
        heads,
        matrices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    /// 1-based, as in captions.
    pub layer: usize,
    pub head: usize,
    /// Mean Shannon entropy of the rows, in nats.
    pub mean_entropy: f64,
    /// Counts of `argmax_j - i` over rows `i`.
    pub offset_histogram: BTreeMap<i64, usize>,
    pub modal_offset: i64,
    /// Attention from `[CLS]` (row 0) to the sentiment tag, when present.
    pub cls_to_tag: Option<f64>,
}

pub fn head_summary(grid: &AttentionGrid) -> Vec<HeadStats> {
    let n = grid.len();
    let tag = grid.sentiment_tag_position();
    let mut out = Vec::with_capacity(grid.layers * grid.heads);
    for (l, layer) in grid.matrices.iter().enumerate() {
        for (h, m) in layer.iter().enumerate() {
            let mut hist = BTreeMap::new();
            let mut entropy = 0.0;
            for (i, row) in m.chunks(n).enumerate() {
                entropy -= row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                let j = crate::model::argmax(row);
                *hist.entry(j as i64 - i as i64).or_insert(0) += 1;
            }
            let modal_offset = hist
                .iter()
                .fold((0, 0), |best, (&o, &c)| if c > best.1 { (o, c) } else { best })
                .0;
            out.push(HeadStats {
                layer: l + 1,
                head: h + 1,
                mean_entropy: entropy / n as f64,
                offset_histogram: hist,
                modal_offset,
                cls_to_tag: tag.map(|t| m[t]),
            });
        }
    }
    out
}
