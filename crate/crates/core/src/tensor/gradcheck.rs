//! Central finite-difference oracle for analytic gradients.

use super::{Graph, Tensor, TensorError};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Largest relative error between the backpropagated gradient of the scalar
/// function `f` at `x` and its central difference with step `h`, over every
/// coordinate:
///
/// `max_i |g_i - (f(x + h e_i) - f(x - h e_i)) / 2h| / max(|g_i|, 1e-8)`
///
/// `f` must be deterministic: a function that records active dropout is
/// rejected with [`TensorError::Contract`]. The error type of `f` is free
/// so model-level closures can be checked too.
pub fn finite_diff_check<F, E>(f: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64, E>
where
    F: for<'g> Fn(&'g Graph, Tensor<'g>) -> Result<Tensor<'g>, E>,
    E: From<TensorError>,
{
    finite_diff_check_at(f, x, shape, h, None)
}

/// Same as [`finite_diff_check`] restricted to the listed coordinates.
pub fn finite_diff_check_at<F, E>(
    f: F,
    x: &[f64],
    shape: &[usize],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64, E>
where
    F: for<'g> Fn(&'g Graph, Tensor<'g>) -> Result<Tensor<'g>, E>,
    E: From<TensorError>,
{
    if !(h > 0.0) {
        return Err(TensorError::Contract(format!("step h = {h} must be positive")).into());
    }
    let g = Graph::new();
    let input = g.leaf(x.to_vec(), shape)?;
    let loss = f(&g, input)?;
    if g.is_stochastic() {
        return Err(TensorError::Contract(
            "finite-difference check needs a deterministic function; disable dropout".into(),
        )
        .into());
    }
    g.backward(loss)?;
    let analytic = input.grad().expect("leaf gradient after backward");

    let eval = |probe: Vec<f64>| -> Result<f64, E> {
        let g = Graph::new();
        let t = g.leaf(probe, shape)?;
        Ok(f(&g, t)?.item())
    };
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut worst = 0.0_f64;
    for &i in coords {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
