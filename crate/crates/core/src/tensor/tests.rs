use std::sync::Arc;

use proptest::prelude::*;

use super::catalogue::{check_op, OPS};
use super::*;

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let g = Graph::new();
    let x = g.leaf(vec![0.0, 0.0], &[2]).unwrap();
    assert_eq!(*x.softmax(0).unwrap().value(), vec![0.5, 0.5]);
}

#[test]
fn kl_of_identical_distributions_is_zero() {
    let g = Graph::new();
    let p = g.constant(vec![0.2, 0.3, 0.5], &[3]).unwrap();
    assert_eq!(p.kl_divergence(p).unwrap().item(), 0.0);
}

#[test]
fn kl_matches_hand_sum() {
    let g = Graph::new();
    let p = g.constant(vec![0.9, 0.1], &[2]).unwrap();
    let q = g.constant(vec![0.5, 0.5], &[2]).unwrap();
    let kl = p.kl_divergence(q).unwrap().item();
    let expected = 0.9 * 1.8_f64.ln() + 0.1 * 0.2_f64.ln();
    assert!((kl - expected).abs() < 1e-15);
    assert!((kl - 0.368_064).abs() < 1e-6);
}

#[test]
fn kl_rejects_non_distributions() {
    let g = Graph::new();
    let p = g.constant(vec![0.9, 0.2], &[2]).unwrap();
    let q = g.constant(vec![0.5, 0.5], &[2]).unwrap();
    assert!(matches!(p.kl_divergence(q), Err(TensorError::Domain { .. })));
    let neg = g.constant(vec![1.5, -0.5], &[2]).unwrap();
    assert!(matches!(q.kl_divergence(neg), Err(TensorError::Domain { .. })));
}

#[test]
fn square_gradient() {
    let g = Graph::new();
    let x = g.leaf(vec![3.0], &[1]).unwrap();
    let loss = x.mul(x).unwrap().sum().unwrap();
    g.backward(loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let g = Graph::new();
    let x = g.leaf(vec![1.0, -2.0], &[2]).unwrap();
    let c = g.scalar(4.0).unwrap();
    let _unused = x.tanh().unwrap();
    g.backward(c).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    assert!(c.grad().is_none());
}

#[test]
fn backward_requires_scalar() {
    let g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
}

#[test]
fn shape_mismatch_is_dimension_error() {
    let g = Graph::new();
    let a = g.leaf(vec![0.0; 6], &[2, 3]).unwrap();
    let b = g.leaf(vec![0.0; 6], &[2, 3]).unwrap();
    assert!(matches!(a.matmul(b), Err(TensorError::Dimension { .. })));
    let c = g.leaf(vec![0.0; 4], &[4]).unwrap();
    assert!(matches!(a.add(c), Err(TensorError::Dimension { .. })));
    assert!(matches!(a.softmax(2), Err(TensorError::Dimension { .. })));
}

#[test]
fn embedding_index_error() {
    let g = Graph::new();
    let t = g.leaf(vec![0.0; 6], &[3, 2]).unwrap();
    assert!(matches!(
        g.embedding_lookup(t, &[0, 3]),
        Err(TensorError::Index { index: 3, size: 3, .. })
    ));
}

#[test]
fn non_finite_input_is_domain_error() {
    let g = Graph::new();
    assert!(matches!(
        g.leaf(vec![f64::NAN], &[1]),
        Err(TensorError::Domain { .. })
    ));
}

#[test]
fn constants_get_no_gradient() {
    let g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
    let d = g.constant(vec![0.5, 0.5], &[2]).unwrap();
    let loss = x.add(d).unwrap().tanh().unwrap().sum().unwrap();
    g.backward(loss).unwrap();
    assert!(d.grad().is_none());
    assert!(x.grad().is_some());
}

#[test]
fn finite_diff_exact_for_linear_maps() {
    let x = vec![0.3, -1.2, 2.5, 0.7];
    let err = finite_diff_check(
        |g, x| {
            let w = g.constant(vec![1.5, -0.5, 2.0, 0.25], &[4, 1])?;
            x.matmul(w)?.sum()
        },
        &x,
        &[1, 4],
        DEFAULT_FD_STEP,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn finite_diff_softmax_cross_entropy() {
    for seed in 0..10 {
        let err = check_op("cross_entropy", seed).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn finite_diff_rejects_active_dropout() {
    let r = finite_diff_check(
        |_, x| x.dropout(0.1, 7)?.sum(),
        &[1.0, 2.0, 3.0],
        &[3],
        DEFAULT_FD_STEP,
    );
    assert!(matches!(r, Err(TensorError::Contract(_))));
}

#[test]
fn every_op_passes_gradient_check() {
    for name in OPS {
        for seed in 0..5 {
            let err = check_op(name, seed).unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn dropout_gradient_is_its_mask() {
    let g = Graph::new();
    let x = g.leaf(vec![1.0; 64], &[8, 8]).unwrap();
    let y = x.dropout(0.25, 11).unwrap();
    g.backward(y.sum().unwrap()).unwrap();
    let mask = dropout_mask(64, 0.25, 11);
    assert_eq!(x.grad().unwrap(), mask);
    assert_eq!(*y.value(), mask);
    assert!(mask.iter().all(|&m| m == 0.0 || m == 1.0 / 0.75));
}

#[test]
fn zero_rate_dropout_is_identity() {
    let g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
    let y = x.dropout(0.0, 3).unwrap();
    assert_eq!(y.id(), x.id());
    assert!(!g.is_stochastic());
}

/// Attention composed from generic ops, one sequence and head at a time.
fn composed_attention<'g>(
    g: &'g Graph,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dim: usize,
    heads: usize,
    masks: &[Vec<bool>],
) -> Vec<f64> {
    let dh = dim / heads;
    let rows: usize = masks.iter().map(Vec::len).sum();
    let mut out = vec![0.0; rows * dim];
    let mut start = 0;
    for m in masks {
        let n = m.len();
        for h in 0..heads {
            let block = |src: &[f64]| -> Vec<f64> {
                (0..n)
                    .flat_map(|i| src[(start + i) * dim + h * dh..][..dh].to_vec())
                    .collect()
            };
            let qh = g.constant(block(q), &[n, dh]).unwrap();
            let kt: Vec<f64> = {
                let kb = block(k);
                (0..dh).flat_map(|t| (0..n).map(move |j| (j, t))).map(|(j, t)| kb[j * dh + t]).collect()
            };
            let kt = g.constant(kt, &[dh, n]).unwrap();
            let vh = g.constant(block(v), &[n, dh]).unwrap();
            let p = qh
                .matmul(kt)
                .unwrap()
                .scale(1.0 / (dh as f64).sqrt())
                .unwrap()
                .masked_softmax(m)
                .unwrap();
            let o = p.matmul(vh).unwrap().value();
            for i in 0..n {
                for t in 0..dh {
                    out[(start + i) * dim + h * dh + t] = o[i * dh + t];
                }
            }
        }
        start += n;
    }
    out
}

#[test]
fn fused_attention_matches_composition() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let masks = vec![vec![true, true, false], vec![true, true, true, true, false]];
    let (rows, dim, heads) = (8, 6, 3);
    let mut draw = || (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (q, k, v) = (draw(), draw(), draw());
    let g = Graph::new();
    let layout = Arc::new(SeqLayout::from_masks(&masks));
    let (qt, kt, vt) = (
        g.constant(q.clone(), &[rows, dim]).unwrap(),
        g.constant(k.clone(), &[rows, dim]).unwrap(),
        g.constant(v.clone(), &[rows, dim]).unwrap(),
    );
    let (fused, probs) = g.attention(qt, kt, vt, &layout, heads, None).unwrap();
    let composed = composed_attention(&g, &q, &k, &v, dim, heads, &masks);
    for (a, b) in fused.value().iter().zip(&composed) {
        assert!((a - b).abs() < 1e-12);
    }
    for h in 0..heads {
        let m = probs.matrix(0, h);
        assert_eq!(m.len(), 9);
        for i in 0..3 {
            assert_eq!(m[i * 3 + 2], 0.0);
            let s: f64 = m[i * 3..i * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_fully_masked_segment() {
    let g = Graph::new();
    let x = g.leaf(vec![0.1; 8], &[2, 4]).unwrap();
    let layout = Arc::new(SeqLayout::from_masks(&[vec![false, false]]));
    assert!(matches!(
        g.attention(x, x, x, &layout, 2, None),
        Err(TensorError::Domain { .. })
    ));
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let g = Graph::new();
        let x = g.leaf((0..12).map(|i| (i as f64 * 0.37).sin()).collect(), &[3, 4]).unwrap();
        let w = g.leaf((0..8).map(|i| (i as f64 * 0.11).cos()).collect(), &[4, 2]).unwrap();
        let loss = x.matmul(w).unwrap().gelu().unwrap().cross_entropy(&[0, 1, 1]).unwrap();
        g.backward(loss).unwrap();
        (x.grad().unwrap(), w.grad().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-10.0f64..10.0, 12)) {
        let g = Graph::new();
        let y = g.constant(vals, &[3, 4]).unwrap().softmax(1).unwrap().value();
        for row in y.chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn kl_is_nonnegative(a in prop::collection::vec(0.01f64..1.0, 4), b in prop::collection::vec(0.01f64..1.0, 4)) {
        let (p, q) = (distribution(&a), distribution(&b));
        let g = Graph::new();
        let kl = g.constant(p.clone(), &[4]).unwrap()
            .kl_divergence(g.constant(q.clone(), &[4]).unwrap()).unwrap().item();
        prop_assert!(kl >= 0.0);
        let max_gap = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if max_gap >= 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }
}
