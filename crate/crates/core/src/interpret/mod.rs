//! Word-importance attribution by integrated gradients, and attention-grid
//! extraction with per-head summary statistics.

mod attention;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Batch, Mode, TransformerClassifier};
use crate::tensor::Graph;
use crate::text::TokenSeq;

pub use attention::{extract_attention, head_summary, AttentionGrid, HeadStats};

/// Path start for the attribution integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The whole embedding-layer output set to zero.
    #[default]
    ZeroEmbedding,
    /// Token embeddings removed, position embeddings kept.
    ZeroTokens,
}

/// Function of the embeddings being attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: Baseline,
    pub output: Output,
    /// Class to attribute; the predicted class when absent.
    pub target: Option<usize>,
    /// Path points evaluated per forward pass.
    pub chunk: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 64,
            baseline: Baseline::ZeroEmbedding,
            output: Output::Probability,
            target: None,
            chunk: 32,
        }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.chunk == 0 {
            return Err(Error::Config("integrated gradients needs steps >= 1 and chunk >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub tokens: Vec<String>,
    /// Per-token sum of `raw` over the embedding dimension.
    pub scores: Vec<f64>,
    /// `[tokens, dim]` row-major attribution of every embedding coordinate.
    pub raw: Vec<f64>,
    pub dim: usize,
    pub target: usize,
    pub predicted: usize,
    /// Probabilities at the input.
    pub probabilities: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|sum(raw) - (f_input - f_baseline)|`.
    pub gap: f64,
    pub steps: usize,
}

impl AttributionRecord {
    /// Sum of all attributions, reported as the sentence attribution score.
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Gap divided by `|f_input - f_baseline|`.
    pub fn relative_gap(&self) -> f64 {
        self.gap / (self.f_input - self.f_baseline).abs()
    }
}

/// Midpoint-rule integrated gradients along the straight line from
/// `baseline` to `x`:
///
/// `IG_i = (x_i - x'_i) * (1/m) * sum_k dF/dx_i(x' + (k - 0.5)/m (x - x'))`
///
/// `grads` receives a chunk of path points and returns the gradient of `F`
/// at each of them. Points are visited in order, so results do not depend
/// on the chunk size beyond floating-point summation order within a chunk.
///
/// ```
/// use tagvat::interpret::integrate_path;
/// // F(x) = 2 x0 - x1 is linear, so the integral is exact.
/// let ig = integrate_path(&[1.0, 3.0], &[0.0, 0.0], 8, 4, |pts| {
///     Ok(pts.iter().map(|_| vec![2.0, -1.0]).collect())
/// })
/// .unwrap();
/// assert_eq!(ig, [2.0, -3.0]);
/// ```
pub fn integrate_path<F>(x: &[f64], baseline: &[f64], steps: usize, chunk: usize, mut grads: F) -> Result<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    if steps == 0 || chunk == 0 {
        return Err(Error::Config("integrated gradients needs steps >= 1 and chunk >= 1".into()));
    }
    if x.len() != baseline.len() {
        return Err(Error::Data(format!(
            "input has {} values but baseline {}",
            x.len(),
            baseline.len()
        )));
    }
    let diff: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut acc = vec![0.0; x.len()];
    let mut k = 0;
    while k < steps {
        let end = (k + chunk).min(steps);
        let points: Vec<Vec<f64>> = (k..end)
            .map(|j| {
                let alpha = (j as f64 + 0.5) / steps as f64;
                baseline.iter().zip(&diff).map(|(b, d)| b + alpha * d).collect()
            })
            .collect();
        let gs = grads(&points)?;
        if gs.len() != points.len() || gs.iter().any(|g| g.len() != x.len()) {
            return Err(Error::Numeric("gradient evaluator returned the wrong shape".into()));
        }
        for g in &gs {
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        }
        k = end;
    }
    Ok(acc
        .iter()
        .zip(&diff)
        .map(|(a, d)| d * a / steps as f64)
        .collect())
}

/// Embeddings of `seq` and of the configured baseline, `[n, d]` each.
fn endpoints(model: &TransformerClassifier, batch: &Batch, baseline: Baseline) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    let x = model.embed(&p, batch, Mode::Eval)?.to_vec();
    let base = match baseline {
        Baseline::ZeroEmbedding => vec![0.0; x.len()],
        Baseline::ZeroTokens => model.embed_positions_only(&p, batch)?.to_vec(),
    };
    Ok((x, base))
}

/// `F` and its embedding gradient at each of `points`, evaluated as one
/// packed batch of copies of the sequence.
fn output_and_grads(
    model: &TransformerClassifier,
    seq: &TokenSeq,
    points: &[Vec<f64>],
    target: usize,
    output: Output,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = points.len();
    let batch = Batch::new(std::iter::repeat_n(seq, k));
    let n_vals = points[0].len();
    let g = Graph::new();
    let p = model.bind_frozen(&g)?;
    let x = g.leaf(points.concat(), &[batch.rows(), model.config().hidden])?;
    let logits = model.forward_from_embeddings(&p, x, &batch, Mode::Eval, false)?.logits;
    let c = model.config().num_classes;
    let out = match output {
        Output::Probability => logits.softmax(1)?,
        Output::Logit => logits,
    };
    let mut pick = vec![0.0; k * c];
    for i in 0..k {
        pick[i * c + target] = 1.0;
    }
    let sel = g.constant(pick, &[k, c])?;
    let f = out.mul(sel)?.sum()?;
    let values = out.value();
    let fs = (0..k).map(|i| values[i * c + target]).collect();
    g.backward(f)?;
    let grad = x.take_grad().expect("leaf gradient");
    Ok((fs, grad.chunks(n_vals).map(<[f64]>::to_vec).collect()))
}

/// Attributes the class probability (or logit) of `seq` to its embedding
/// coordinates. Works in evaluation mode on the real (unpadded) tokens.
pub fn integrated_gradients(
    model: &TransformerClassifier,
    seq: &TokenSeq,
    config: &IgConfig,
) -> Result<AttributionRecord> {
    config.validate()?;
    let batch = Batch::new([seq]);
    let (x, base) = endpoints(model, &batch, config.baseline)?;
    let probabilities = model.predict_proba(seq)?;
    let predicted = argmax(&probabilities);
    let target = config.target.unwrap_or(predicted);
    if target >= model.config().num_classes {
        return Err(Error::Config(format!("target class {target} out of range")));
    }
    let (ends, _) = output_and_grads(model, seq, &[x.clone(), base.clone()], target, config.output)?;
    let raw = integrate_path(&x, &base, config.steps, config.chunk, |pts| {
        Ok(output_and_grads(model, seq, pts, target, config.output)?.1)
    })?;
    let dim = model.config().hidden;
    let scores: Vec<f64> = raw.chunks(dim).map(|r| r.iter().sum()).collect();
    let total: f64 = scores.iter().sum();
    Ok(AttributionRecord {
        tokens: seq.tokens.clone(),
        scores,
        raw,
        dim,
        target,
        predicted,
        probabilities,
        f_input: ends[0],
        f_baseline: ends[1],
        gap: (total - (ends[0] - ends[1])).abs(),
        steps: config.steps,
    })
}

/// Per-token scores divided by the largest magnitude, so they lie in
/// `[-1, 1]` with signs kept. All zeros stay zeros.
///
/// ```
/// assert_eq!(tagvat::interpret::normalize_scores(&[2.0, -1.0, 0.0]), [1.0, -0.5, 0.0]);
/// ```
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if max == 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| s / max).collect()
}

pub fn word_importance(record: &AttributionRecord) -> Vec<f64> {
    normalize_scores(&record.scores)
}
