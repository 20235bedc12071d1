//! Dense numeric kernels shared by forward and backward passes.

/// Strided read-only matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> Operand<'a> {
    pub(crate) fn new(data: &'a [f64], row_stride: usize, col_stride: usize) -> Self {
        Self {
            data,
            row_stride,
            col_stride,
        }
    }

    /// The same storage read as its transpose.
    pub(crate) fn t(self) -> Self {
        Self {
            data: self.data,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
        }
    }
}

/// `c = alpha * a[m,k] * b[k,n] + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: Operand<'_>,
    b: Operand<'_>,
    beta: f64,
    c: &mut [f64],
    c_row_stride: usize,
    c_col_stride: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * c_row_stride + j * c_col_stride] *= beta;
            }
        }
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "gemm: lhs out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "gemm: rhs out of bounds");
    assert!(
        (m - 1) * c_row_stride + (n - 1) * c_col_stride < c.len(),
        "gemm: output out of bounds"
    );
    // SAFETY: the asserts above bound every index dgemm touches, and `c` is a
    // unique borrow distinct from the shared operand slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            c_row_stride as isize,
            c_col_stride as isize,
        );
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Softmax over the unmasked entries of `row`; masked entries get exactly 0.
/// At least one entry must be unmasked.
pub(crate) fn masked_softmax_row(row: &[f64], mask: &[bool], out: &mut [f64]) {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for ((o, &v), &m) in out.iter_mut().zip(row).zip(mask) {
        if m {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = 0.0;
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o /= sum;
        }
    }
}

/// In-place softmax backward for one row: `g <- y * (g - <g, y>)`.
pub(crate) fn softmax_row_backward(y: &[f64], g: &mut [f64]) {
    let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    for (gi, yi) in g.iter_mut().zip(y) {
        *gi = yi * (*gi - dot);
    }
}
