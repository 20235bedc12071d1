use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub num_classes: usize,
    /// Dense layers after the pooler: 1 (output only) or 2 (tanh + output).
    pub head_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            ff_dim: 256,
            max_len: 64,
            vocab_size: 8192,
            dropout: 0.1,
            num_classes: 2,
            head_layers: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Twelve layers of twelve heads: the 144-head attention grid, at a
    /// width small enough to train on a CPU.
    pub fn base_shape() -> Self {
        Self {
            layers: 12,
            heads: 12,
            hidden: 192,
            ff_dim: 384,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ff_dim == 0 {
            return fail("layers, heads, hidden and ff_dim must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} leaves no room for a token", self.max_len));
        }
        if self.vocab_size <= crate::text::RESERVED {
            return fail(format!("vocab_size {} too small", self.vocab_size));
        }
        if !(1..=2).contains(&self.head_layers) {
            return fail(format!("head_layers {} must be 1 or 2", self.head_layers));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.hidden, self.ff_dim);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![self.vocab_size, d]),
            ("embeddings.position".to_string(), vec![self.max_len, d]),
            ("embeddings.norm.gain".to_string(), vec![d]),
            ("embeddings.norm.bias".to_string(), vec![d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("query.weight"), vec![d, d]),
                (p("query.bias"), vec![d]),
                (p("key.weight"), vec![d, d]),
                (p("key.bias"), vec![d]),
                (p("value.weight"), vec![d, d]),
                (p("value.bias"), vec![d]),
                (p("output.weight"), vec![d, d]),
                (p("output.bias"), vec![d]),
                (p("attention_norm.gain"), vec![d]),
                (p("attention_norm.bias"), vec![d]),
                (p("ff_in.weight"), vec![d, f]),
                (p("ff_in.bias"), vec![f]),
                (p("ff_out.weight"), vec![f, d]),
                (p("ff_out.bias"), vec![d]),
                (p("ff_norm.gain"), vec![d]),
                (p("ff_norm.bias"), vec![d]),
            ]);
        }
        out.push(("pooler.weight".into(), vec![d, d]));
        out.push(("pooler.bias".into(), vec![d]));
        if self.head_layers == 2 {
            out.push(("head.dense.weight".into(), vec![d, d]));
            out.push(("head.dense.bias".into(), vec![d]));
        }
        out.push(("head.output.weight".into(), vec![d, self.num_classes]));
        out.push(("head.output.bias".into(), vec![self.num_classes]));
        out
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (d, f, c) = (self.hidden, self.ff_dim, self.num_classes);
        let embeddings = (self.vocab_size + self.max_len) * d + 2 * d;
        let layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        let head = (d * d + d) * self.head_layers + d * c + c;
        embeddings + self.layers * layer + head
    }
}
