use super::kernels::{self, gemm, softmax_row_backward, Operand};
use super::{attention, as_matrix, Graph, Op, Result, TensorError};

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], id: usize, len: usize) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

pub(super) fn run(graph: &Graph, loss: usize) -> Result<()> {
    let nodes = graph.nodes.borrow();
    if nodes[loss].value.len() != 1 {
        return Err(TensorError::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            nodes[loss].shape
        )));
    }
    let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
    grads[loss] = Some(vec![1.0]);

    for id in (0..=loss).rev() {
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let rg = |i: usize| nodes[i].requires_grad;
        let len = |i: usize| nodes[i].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(&nodes[*a].shape).expect("matmul lhs");
                let n = nodes[*b].shape[1];
                if rg(*a) {
                    let bv = &nodes[*b].value;
                    let ga = acc(&mut grads, *a, m * k);
                    // dA = dC * B^T
                    gemm(m, n, k, 1.0, Operand::new(&g, n, 1), Operand::new(bv, n, 1).t(), 1.0, ga, k, 1);
                }
                if rg(*b) {
                    let av = &nodes[*a].value;
                    let gb = acc(&mut grads, *b, k * n);
                    // dB = A^T * dC
                    gemm(k, m, n, 1.0, Operand::new(av, k, 1).t(), Operand::new(&g, n, 1), 1.0, gb, n, 1);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if rg(p) {
                        let gp = acc(&mut grads, p, g.len());
                        gp.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddBias(a, b) => {
                if rg(*a) {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                if rg(*b) {
                    let c = len(*b);
                    let gb = acc(&mut grads, *b, c);
                    for (i, y) in g.iter().enumerate() {
                        gb[i % c] += y;
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                if rg(*b) {
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = &nodes[*b].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if rg(*b) {
                    let av = &nodes[*a].value;
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if rg(*a) {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::Tanh(a) => {
                if rg(*a) {
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Gelu(a) => {
                if rg(*a) {
                    let x = &nodes[*a].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * kernels::gelu_grad(x[i]);
                    }
                }
            }
            Op::Softmax { input, axis } => {
                if rg(*input) {
                    let y = &node.value;
                    let (rows, cols) = as_matrix(&node.shape).expect("softmax shape");
                    let (outer, inner, so, si) = if *axis == 1 {
                        (rows, cols, cols, 1)
                    } else {
                        (cols, rows, 1, cols)
                    };
                    let gi = acc(&mut grads, *input, g.len());
                    for o in 0..outer {
                        let dot: f64 = (0..inner)
                            .map(|i| g[o * so + i * si] * y[o * so + i * si])
                            .sum();
                        for i in 0..inner {
                            let idx = o * so + i * si;
                            gi[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
            Op::MaskedSoftmax(input) => {
                if rg(*input) {
                    let y = &node.value;
                    let (rows, cols) = as_matrix(&node.shape).expect("softmax shape");
                    let mut row = vec![0.0; cols];
                    let gi = acc(&mut grads, *input, g.len());
                    for r in 0..rows {
                        row.copy_from_slice(&g[r * cols..(r + 1) * cols]);
                        softmax_row_backward(&y[r * cols..(r + 1) * cols], &mut row);
                        for c in 0..cols {
                            gi[r * cols + c] += row[c];
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                rstd,
            } => {
                let cols = len(*gain);
                let rows = g.len() / cols;
                if rg(*gain) {
                    let gg = acc(&mut grads, *gain, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg[c] += g[r * cols + c] * normalized[r * cols + c];
                        }
                    }
                }
                if rg(*bias) {
                    let gb = acc(&mut grads, *bias, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gb[c] += g[r * cols + c];
                        }
                    }
                }
                if rg(*input) {
                    let gamma = nodes[*gain].value.clone();
                    let gi = acc(&mut grads, *input, g.len());
                    let mut dxh = vec![0.0; cols];
                    for r in 0..rows {
                        let xh = &normalized[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxh[c] = g[r * cols + c] * gamma[c];
                        }
                        let mean_d = dxh.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            gi[r * cols + c] += rstd[r] * (dxh[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if rg(*table) {
                    let dim = nodes[*table].shape[1];
                    let gt = acc(&mut grads, *table, len(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            gt[id * dim + c] += g[r * dim + c];
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if rg(*input) {
                    let gi = acc(&mut grads, *input, g.len());
                    for i in 0..g.len() {
                        gi[i] += g[i] * mask[i];
                    }
                }
            }
            Op::SelectRows { input, rows } => {
                if rg(*input) {
                    let cols = node.shape[1];
                    let gi = acc(&mut grads, *input, len(*input));
                    for (r, &src) in rows.iter().enumerate() {
                        for c in 0..cols {
                            gi[src * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let ga = acc(&mut grads, *a, len(*a));
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if rg(*a) {
                    let n = len(*a) as f64;
                    let ga = acc(&mut grads, *a, len(*a));
                    ga.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if rg(*logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let w = g[0] / b as f64;
                    let gl = acc(&mut grads, *logits, probs.len());
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += w * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::KlDivergence(p, q) => {
                let (pv, qv) = (&nodes[*p].value, &nodes[*q].value);
                let rows = as_matrix(&nodes[*p].shape).expect("kl shape").0;
                let w = g[0] / rows as f64;
                if rg(*p) {
                    let gp = acc(&mut grads, *p, pv.len());
                    for i in 0..pv.len() {
                        if pv[i] > 0.0 {
                            gp[i] += w * ((pv[i] / qv[i]).ln() + 1.0);
                        }
                    }
                }
                if rg(*q) {
                    let gq = acc(&mut grads, *q, qv.len());
                    for i in 0..qv.len() {
                        if pv[i] > 0.0 {
                            gq[i] -= w * pv[i] / qv[i];
                        }
                    }
                }
            }
            Op::Attention(saved) => {
                let [qi, ki, vi] = saved.parents();
                let n = len(qi);
                let mut gq = grads[qi].take().unwrap_or_else(|| vec![0.0; n]);
                let mut gk = grads[ki].take().unwrap_or_else(|| vec![0.0; n]);
                let mut gv = grads[vi].take().unwrap_or_else(|| vec![0.0; n]);
                attention::backward(
                    saved,
                    &nodes[qi].value,
                    &nodes[ki].value,
                    &nodes[vi].value,
                    &g,
                    &mut gq,
                    &mut gk,
                    &mut gv,
                );
                // q, k and v may alias the same node; later writes must keep
                // earlier accumulations.
                for (id, gr) in [(qi, gq), (ki, gk), (vi, gv)] {
                    if !rg(id) {
                        continue;
                    }
                    match &mut grads[id] {
                        Some(existing) => existing.iter_mut().zip(&gr).for_each(|(x, y)| *x += y),
                        slot => *slot = Some(gr),
                    }
                }
            }
        }
        grads[id] = Some(g);
    }
    drop(nodes);

    let mut nodes = graph.nodes.borrow_mut();
    for (node, g) in nodes.iter_mut().zip(grads) {
        if node.requires_grad {
            node.grad = Some(g.unwrap_or_else(|| vec![0.0; node.value.len()]));
        }
    }
    Ok(())
}
