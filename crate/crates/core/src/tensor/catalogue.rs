//! Gradient-check cases covering every differentiable operation.
//!
//! Each case feeds a random input through one operation (with random
//! constant operands where needed) and reduces the result to a scalar with a
//! random weighting, so every output element contributes to the gradient.
//! [`check_op`] runs the central finite-difference oracle on one case.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{finite_diff_check, Graph, Result, SeqLayout, Tensor, DEFAULT_FD_STEP, LAYER_NORM_EPS};

/// Names accepted by [`check_op`].
pub const OPS: &[&str] = &[
    "matmul_lhs",
    "matmul_rhs",
    "add",
    "add_bias",
    "sub",
    "mul",
    "mul_self",
    "scale",
    "tanh",
    "gelu",
    "softmax_axis0",
    "softmax_axis1",
    "masked_softmax",
    "layer_norm_input",
    "layer_norm_gain",
    "layer_norm_bias",
    "embedding_lookup",
    "select_rows",
    "sum",
    "mean",
    "cross_entropy",
    "kl_divergence_p",
    "kl_divergence_q",
    "attention_qkv",
    "attention_query",
];

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Weighted sum `sum(w * y)` with fixed random weights.
fn reduce<'g>(g: &'g Graph, y: Tensor<'g>, w: &[f64]) -> Result<Tensor<'g>> {
    let shape = y.shape();
    let weights = g.constant(w[..y.numel()].to_vec(), &shape)?;
    y.mul(weights)?.sum()
}

/// Max relative finite-difference error of operation `name` on seed `seed`.
pub fn check_op(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let w = normal(&mut rng, 256);
    let c = normal(&mut rng, 256);
    let h = DEFAULT_FD_STEP;
    match name {
        "matmul_lhs" => {
            let x = normal(&mut rng, 12);
            finite_diff_check(
                |g, x| {
                    let b = g.constant(c[..8].to_vec(), &[4, 2])?;
                    reduce(g, x.matmul(b)?, &w)
                },
                &x,
                &[3, 4],
                h,
            )
        }
        "matmul_rhs" => {
            let x = normal(&mut rng, 8);
            finite_diff_check(
                |g, x| {
                    let a = g.constant(c[..12].to_vec(), &[3, 4])?;
                    reduce(g, a.matmul(x)?, &w)
                },
                &x,
                &[4, 2],
                h,
            )
        }
        "add" | "sub" | "mul" => {
            let x = normal(&mut rng, 6);
            finite_diff_check(
                |g, x| {
                    let k = g.constant(c[..6].to_vec(), &[2, 3])?;
                    let y = match name {
                        "add" => k.add(x)?,
                        "sub" => k.sub(x)?,
                        _ => x.mul(k)?,
                    };
                    reduce(g, y, &w)
                },
                &x,
                &[2, 3],
                h,
            )
        }
        "mul_self" => {
            let x = normal(&mut rng, 5);
            finite_diff_check(|g, x| reduce(g, x.mul(x)?, &w), &x, &[5], h)
        }
        "add_bias" => {
            let x = normal(&mut rng, 3);
            finite_diff_check(
                |g, x| {
                    let m = g.constant(c[..12].to_vec(), &[4, 3])?;
                    reduce(g, m.add(x)?.tanh()?, &w)
                },
                &x,
                &[3],
                h,
            )
        }
        "scale" => {
            let x = normal(&mut rng, 4);
            finite_diff_check(|g, x| reduce(g, x.scale(-1.7)?, &w), &x, &[2, 2], h)
        }
        "tanh" => {
            let x = normal(&mut rng, 6);
            finite_diff_check(|g, x| reduce(g, x.tanh()?, &w), &x, &[2, 3], h)
        }
        "gelu" => {
            let x: Vec<f64> = normal(&mut rng, 6).iter().map(|v| 2.0 * v).collect();
            finite_diff_check(|g, x| reduce(g, x.gelu()?, &w), &x, &[2, 3], h)
        }
        "softmax_axis0" | "softmax_axis1" => {
            let axis = usize::from(name == "softmax_axis1");
            let x = normal(&mut rng, 12);
            finite_diff_check(|g, x| reduce(g, x.softmax(axis)?, &w), &x, &[3, 4], h)
        }
        "masked_softmax" => {
            let x = normal(&mut rng, 12);
            let mask = [true, false, true, true];
            finite_diff_check(|g, x| reduce(g, x.masked_softmax(&mask)?, &w), &x, &[3, 4], h)
        }
        "layer_norm_input" => {
            let x = normal(&mut rng, 10);
            finite_diff_check(
                |g, x| {
                    let gain = g.constant(c[..5].iter().map(|v| 1.0 + 0.3 * v).collect(), &[5])?;
                    let bias = g.constant(c[5..10].to_vec(), &[5])?;
                    reduce(g, x.layer_norm(gain, bias, LAYER_NORM_EPS)?, &w)
                },
                &x,
                &[2, 5],
                h,
            )
        }
        "layer_norm_gain" | "layer_norm_bias" => {
            let x = normal(&mut rng, 5);
            finite_diff_check(
                |g, x| {
                    let input = g.constant(c[..15].to_vec(), &[3, 5])?;
                    let other = g.constant(c[15..20].to_vec(), &[5])?;
                    let y = if name == "layer_norm_gain" {
                        input.layer_norm(x, other, LAYER_NORM_EPS)?
                    } else {
                        input.layer_norm(other, x, LAYER_NORM_EPS)?
                    };
                    reduce(g, y, &w)
                },
                &x,
                &[5],
                h,
            )
        }
        "embedding_lookup" => {
            let x = normal(&mut rng, 15);
            finite_diff_check(
                |g, x| reduce(g, g.embedding_lookup(x, &[2, 0, 2, 4])?, &w),
                &x,
                &[5, 3],
                h,
            )
        }
        "select_rows" => {
            let x = normal(&mut rng, 12);
            finite_diff_check(|g, x| reduce(g, x.select_rows(&[3, 1, 3])?, &w), &x, &[4, 3], h)
        }
        "sum" => {
            let x = normal(&mut rng, 6);
            finite_diff_check(|_, x| x.tanh()?.sum(), &x, &[2, 3], h)
        }
        "mean" => {
            let x = normal(&mut rng, 6);
            finite_diff_check(|_, x| x.tanh()?.mean(), &x, &[3, 2], h)
        }
        "cross_entropy" => {
            let x = normal(&mut rng, 12);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            finite_diff_check(|_, x| x.cross_entropy(&labels), &x, &[3, 4], h)
        }
        "kl_divergence_p" | "kl_divergence_q" => {
            let x = normal(&mut rng, 6);
            let other: Vec<f64> = {
                let raw: Vec<f64> = c[..6].iter().map(|v| v.exp()).collect();
                raw.chunks(3)
                    .flat_map(|r| {
                        let s: f64 = r.iter().sum();
                        r.iter().map(move |v| v / s)
                    })
                    .collect()
            };
            finite_diff_check(
                |g, x| {
                    let dist = x.softmax(1)?;
                    let fixed = g.constant(other.clone(), &[2, 3])?;
                    if name == "kl_divergence_p" {
                        dist.kl_divergence(fixed)
                    } else {
                        fixed.kl_divergence(dist)
                    }
                },
                &x,
                &[2, 3],
                h,
            )
        }
        "attention_qkv" | "attention_query" => {
            let layout = Arc::new(SeqLayout::from_masks(&[
                vec![true, true, true, false],
                vec![true, true, true],
            ]));
            let x = normal(&mut rng, 7 * 4);
            finite_diff_check(
                |g, x| {
                    let (q, k, v) = if name == "attention_qkv" {
                        (x, x, x.tanh()?)
                    } else {
                        (x, g.constant(c[..28].to_vec(), &[7, 4])?, g.constant(c[28..56].to_vec(), &[7, 4])?)
                    };
                    let (out, _) = g.attention(q, k, v, &layout, 2, None)?;
                    reduce(g, out, &w)
                },
                &x,
                &[7, 4],
                h,
            )
        }
        other => Err(super::TensorError::Contract(format!("unknown op case {other}"))),
    }
}
