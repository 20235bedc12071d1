//! Define-by-run reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation applied to its [`Tensor`] handles. The
//! graph is rebuilt for every forward pass, so perturbation loops that need
//! repeated gradients with respect to inputs simply build a fresh graph.
//!
//! Arrays are row-major. Most operations work on matrices (`[rows, cols]`);
//! a 1-D tensor `[n]` is treated as a single row and a scalar has shape `[]`.

mod attention;
mod backward;
pub mod catalogue;
mod gradcheck;
pub(crate) mod kernels;

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use attention::{AttentionProbs, Segment, SeqLayout};
pub use gradcheck::{finite_diff_check, finite_diff_check_at, DEFAULT_FD_STEP};

/// Tolerance on the row sums of distributions fed to [`Tensor::kl_divergence`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Layer-norm variance epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("index {index} out of range in {op} (size {size})")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn domain_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Domain {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `(rows, cols)` view of a shape: scalars are 1x1, vectors are one row.
pub(crate) fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [] => Some((1, 1)),
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Gelu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    MaskedSoftmax(usize),
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    SelectRows {
        input: usize,
        rows: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    KlDivergence(usize, usize),
    Attention(attention::AttentionSaved),
}

pub(crate) struct Node {
    pub(crate) value: Arc<Vec<f64>>,
    pub(crate) shape: Vec<usize>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, which
/// is a topological order of the computation.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    stochastic: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Tensor<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True once any dropout with a nonzero rate has been recorded.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic.get()
    }

    fn push(&self, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Tensor<'_> {
        self.push_shared(Arc::new(value), shape, op, requires_grad)
    }

    fn push_shared(
        &self,
        value: Arc<Vec<f64>>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
    ) -> Tensor<'_> {
        debug_assert_eq!(value.len(), numel(&shape));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
            grad: None,
        });
        Tensor {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf_impl(&self, value: Arc<Vec<f64>>, shape: &[usize], requires_grad: bool) -> Result<Tensor<'_>> {
        if value.len() != numel(shape) {
            return Err(dim_err(
                "leaf",
                format!("{} values for shape {:?}", value.len(), shape),
            ));
        }
        check_finite("leaf", &value)?;
        Ok(self.push_shared(value, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// Differentiable input.
    pub fn leaf(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf_impl(Arc::new(values), shape, true)
    }

    /// Differentiable input sharing storage with the caller (model parameters).
    pub fn shared_leaf(&self, values: Arc<Vec<f64>>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf_impl(values, shape, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf_impl(Arc::new(values), shape, false)
    }

    /// Shared-storage input that never receives a gradient.
    pub fn shared_constant(&self, values: Arc<Vec<f64>>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf_impl(values, shape, false)
    }

    pub fn scalar(&self, value: f64) -> Result<Tensor<'_>> {
        self.constant(vec![value], &[])
    }

    /// Rows of `table` (`[vocab, dim]`) selected by `ids`, giving `[ids.len(), dim]`.
    pub fn embedding_lookup<'g>(&'g self, table: Tensor<'g>, ids: &[usize]) -> Result<Tensor<'g>> {
        table.same_graph(self)?;
        let (vocab, dim) = match table.shape().as_slice() {
            [v, d] => (*v, *d),
            s => return Err(dim_err("embedding_lookup", format!("table shape {s:?}"))),
        };
        let tv = table.value();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index {
                    op: "embedding_lookup",
                    index: id,
                    size: vocab,
                });
            }
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            out,
            vec![ids.len(), dim],
            Op::Embedding {
                table: table.id,
                ids: ids.to_vec(),
            },
            table.requires_grad(),
        ))
    }

    pub(crate) fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.nodes.borrow()[id])
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every tensor that requires
    /// a gradient holds one; tensors the loss does not depend on hold zeros.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<()> {
        loss.same_graph(self)?;
        backward::run(self, loss.id)
    }
}

pub(crate) fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(domain_err(
            op,
            format!("non-finite value {} at index {i}", values[i]),
        )),
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(dim_err(op, format!("{a:?} vs {b:?}")))
    }
}

impl<'g> Tensor<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_node(self.id, |n| n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        self.graph.with_node(self.id, |n| n.value.len())
    }

    pub fn value(&self) -> Arc<Vec<f64>> {
        self.graph.with_node(self.id, |n| Arc::clone(&n.value))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.with_node(self.id, |n| n.requires_grad)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.with_node(self.id, |n| n.grad.clone())
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.graph.nodes.borrow_mut()[self.id].grad.take()
    }

    fn same_graph(&self, g: &Graph) -> Result<()> {
        if std::ptr::eq(self.graph, g) {
            Ok(())
        } else {
            Err(TensorError::Contract(
                "tensors from different graphs cannot be combined".into(),
            ))
        }
    }

    fn emit(&self, op_name: &'static str, value: Vec<f64>, shape: Vec<usize>, op: Op, rg: bool) -> Result<Tensor<'g>> {
        check_finite(op_name, &value)?;
        Ok(self.graph.push(value, shape, op, rg))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, rhs: Tensor<'g>) -> Result<Tensor<'g>> {
        rhs.same_graph(self.graph)?;
        let (sa, sb) = (self.shape(), rhs.shape());
        let ((m, k), (k2, n)) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) => ((*m, *k), (*k2, *n)),
            _ => return Err(dim_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        if k != k2 {
            return Err(dim_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (a, b) = (self.value(), rhs.value());
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            1.0,
            kernels::Operand::new(&a, k, 1),
            kernels::Operand::new(&b, n, 1),
            0.0,
            &mut out,
            n,
            1,
        );
        let rg = self.requires_grad() || rhs.requires_grad();
        self.emit("matmul", out, vec![m, n], Op::MatMul(self.id, rhs.id), rg)
    }

    /// Elementwise sum. A 1-D right operand whose length equals the last
    /// dimension of `self` is broadcast over rows (bias addition).
    pub fn add(self, rhs: Tensor<'g>) -> Result<Tensor<'g>> {
        rhs.same_graph(self.graph)?;
        let (sa, sb) = (self.shape(), rhs.shape());
        let (a, b) = (self.value(), rhs.value());
        let rg = self.requires_grad() || rhs.requires_grad();
        if sa == sb {
            let out = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
            return self.emit("add", out, sa, Op::Add(self.id, rhs.id), rg);
        }
        match (sa.as_slice(), sb.as_slice()) {
            ([_, c], [c2]) if c == c2 => {
                let c = *c;
                let out = a
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + b[i % c])
                    .collect();
                self.emit("add", out, sa, Op::AddBias(self.id, rhs.id), rg)
            }
            _ => Err(dim_err("add", format!("{sa:?} + {sb:?}"))),
        }
    }

    pub fn sub(self, rhs: Tensor<'g>) -> Result<Tensor<'g>> {
        rhs.same_graph(self.graph)?;
        let (sa, sb) = (self.shape(), rhs.shape());
        same_shape("sub", &sa, &sb)?;
        let (a, b) = (self.value(), rhs.value());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        let rg = self.requires_grad() || rhs.requires_grad();
        self.emit("sub", out, sa, Op::Sub(self.id, rhs.id), rg)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, rhs: Tensor<'g>) -> Result<Tensor<'g>> {
        rhs.same_graph(self.graph)?;
        let (sa, sb) = (self.shape(), rhs.shape());
        same_shape("mul", &sa, &sb)?;
        let (a, b) = (self.value(), rhs.value());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let rg = self.requires_grad() || rhs.requires_grad();
        self.emit("mul", out, sa, Op::Mul(self.id, rhs.id), rg)
    }

    pub fn scale(self, c: f64) -> Result<Tensor<'g>> {
        let out = self.value().iter().map(|x| x * c).collect();
        self.emit("scale", out, self.shape(), Op::Scale(self.id, c), self.requires_grad())
    }

    pub fn tanh(self) -> Result<Tensor<'g>> {
        let out = self.value().iter().map(|x| x.tanh()).collect();
        self.emit("tanh", out, self.shape(), Op::Tanh(self.id), self.requires_grad())
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Tensor<'g>> {
        let out = self.value().iter().map(|&x| kernels::gelu(x)).collect();
        self.emit("gelu", out, self.shape(), Op::Gelu(self.id), self.requires_grad())
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows). For a 1-D
    /// tensor only axis 0 is valid and normalizes the whole vector.
    pub fn softmax(self, axis: usize) -> Result<Tensor<'g>> {
        let shape = self.shape();
        let (rows, cols, axis) = match (shape.as_slice(), axis) {
            ([n], 0) => (1, *n, 1),
            ([r, c], 0 | 1) => (*r, *c, axis),
            _ => {
                return Err(dim_err(
                    "softmax",
                    format!("axis {axis} for shape {shape:?}"),
                ))
            }
        };
        let x = self.value();
        check_finite("softmax", &x)?;
        let mut out = vec![0.0; x.len()];
        let (outer, inner, so, si) = if axis == 1 {
            (rows, cols, cols, 1)
        } else {
            (cols, rows, 1, cols)
        };
        for o in 0..outer {
            let max = (0..inner)
                .map(|i| x[o * so + i * si])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..inner {
                let e = (x[o * so + i * si] - max).exp();
                out[o * so + i * si] = e;
                sum += e;
            }
            for i in 0..inner {
                out[o * so + i * si] /= sum;
            }
        }
        self.emit(
            "softmax",
            out,
            shape,
            Op::Softmax {
                input: self.id,
                axis,
            },
            self.requires_grad(),
        )
    }

    /// Softmax along the last axis where positions with `mask == false` are
    /// treated as negative infinity and receive probability exactly zero.
    pub fn masked_softmax(self, mask: &[bool]) -> Result<Tensor<'g>> {
        let shape = self.shape();
        let (rows, cols) =
            as_matrix(&shape).ok_or_else(|| dim_err("masked_softmax", format!("{shape:?}")))?;
        if mask.len() != cols {
            return Err(dim_err(
                "masked_softmax",
                format!("mask length {} for {cols} columns", mask.len()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(domain_err("masked_softmax", "every position is masked"));
        }
        let x = self.value();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let o = &mut out[r * cols..(r + 1) * cols];
            kernels::masked_softmax_row(row, mask, o);
        }
        self.emit(
            "masked_softmax",
            out,
            shape,
            Op::MaskedSoftmax(self.id),
            self.requires_grad(),
        )
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both 1-D of the row width).
    pub fn layer_norm(self, gain: Tensor<'g>, bias: Tensor<'g>, eps: f64) -> Result<Tensor<'g>> {
        gain.same_graph(self.graph)?;
        bias.same_graph(self.graph)?;
        let shape = self.shape();
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => return Err(dim_err("layer_norm", format!("{shape:?}"))),
        };
        if gain.shape() != [cols] || bias.shape() != [cols] {
            return Err(dim_err(
                "layer_norm",
                format!("gain {:?} bias {:?} for width {cols}", gain.shape(), bias.shape()),
            ));
        }
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let mut normalized = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let xh = (row[c] - mean) * rs;
                normalized[r * cols + c] = xh;
                out[r * cols + c] = xh * gv[c] + bv[c];
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        self.emit(
            "layer_norm",
            out,
            shape,
            Op::LayerNorm {
                input: self.id,
                gain: gain.id,
                bias: bias.id,
                normalized,
                rstd,
            },
            rg,
        )
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)`.
    /// The mask is a pure function of `seed`. A zero rate is the identity.
    pub fn dropout(self, rate: f64, seed: u64) -> Result<Tensor<'g>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(domain_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(self);
        }
        self.graph.stochastic.set(true);
        let mask = dropout_mask(self.numel(), rate, seed);
        let out = self
            .value()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.emit(
            "dropout",
            out,
            self.shape(),
            Op::Dropout {
                input: self.id,
                mask,
            },
            self.requires_grad(),
        )
    }

    /// Rows `rows` of a matrix, in the given order.
    pub fn select_rows(self, rows: &[usize]) -> Result<Tensor<'g>> {
        let shape = self.shape();
        let (r, c) = match shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(dim_err("select_rows", format!("{shape:?}"))),
        };
        let x = self.value();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: i,
                    size: r,
                });
            }
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        self.emit(
            "select_rows",
            out,
            vec![rows.len(), c],
            Op::SelectRows {
                input: self.id,
                rows: rows.to_vec(),
            },
            self.requires_grad(),
        )
    }

    pub fn sum(self) -> Result<Tensor<'g>> {
        let s = self.value().iter().sum();
        self.emit("sum", vec![s], vec![], Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Result<Tensor<'g>> {
        let v = self.value();
        if v.is_empty() {
            return Err(dim_err("mean", "empty tensor"));
        }
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.emit("mean", vec![s], vec![], Op::Mean(self.id), self.requires_grad())
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)`.
    /// `self` is `[batch, classes]` or `[classes]` (one example).
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Tensor<'g>> {
        let shape = self.shape();
        let (b, c) = match shape.as_slice() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            _ => return Err(dim_err("cross_entropy", format!("{shape:?}"))),
        };
        if labels.len() != b {
            return Err(dim_err(
                "cross_entropy",
                format!("{} labels for {b} rows", labels.len()),
            ));
        }
        let x = self.value();
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: y,
                    size: c,
                });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        loss /= b as f64;
        self.emit(
            "cross_entropy",
            vec![loss],
            vec![],
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
            self.requires_grad(),
        )
    }

    /// `KL(self || q)` in nats, averaged over rows. Both operands must hold
    /// distributions (nonnegative rows summing to one).
    pub fn kl_divergence(self, q: Tensor<'g>) -> Result<Tensor<'g>> {
        q.same_graph(self.graph)?;
        let (sp, sq) = (self.shape(), q.shape());
        same_shape("kl_divergence", &sp, &sq)?;
        let (rows, cols) = match sp.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => return Err(dim_err("kl_divergence", format!("{sp:?}"))),
        };
        let (p, qv) = (self.value(), q.value());
        validate_distribution("kl_divergence", &p, rows, cols)?;
        validate_distribution("kl_divergence", &qv, rows, cols)?;
        let mut total = 0.0;
        for (pi, qi) in p.iter().zip(qv.iter()) {
            if *pi > 0.0 {
                if *qi <= 0.0 {
                    return Err(domain_err(
                        "kl_divergence",
                        "q assigns zero mass where p is positive",
                    ));
                }
                total += pi * (pi / qi).ln();
            }
        }
        let kl = total / rows as f64;
        let rg = self.requires_grad() || q.requires_grad();
        self.emit("kl_divergence", vec![kl], vec![], Op::KlDivergence(self.id, q.id), rg)
    }
}

fn validate_distribution(op: &'static str, v: &[f64], rows: usize, cols: usize) -> Result<()> {
    for r in 0..rows {
        let row = &v[r * cols..(r + 1) * cols];
        if let Some(x) = row.iter().find(|x| **x < 0.0) {
            return Err(domain_err(op, format!("negative probability {x}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(domain_err(op, format!("row {r} sums to {s}")));
        }
    }
    Ok(())
}

/// Inverted-dropout multipliers (`0` or `1 / (1 - rate)`) drawn from `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests;
