use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn leaky_relu(input: &Tensor, slope: Real) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn leaky_relu_backward(input: &[Real], grad_out: &[Real], slope: Real) -> Vec<Real> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}

/// Row-wise normalized exponential of a `[r, c]` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(2, "softmax_rows")?;
    let cols = logits.shape()[1];
    if cols == 0 {
        return Err(Error::Dimension("softmax_rows: empty rows".into()));
    }
    let out = softmax_rows_forward(logits.data(), cols);
    Tensor::new(logits.shape().to_vec(), out)
}

pub(crate) fn softmax_rows_forward(x: &[Real], cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

pub(crate) fn softmax_rows_backward(y: &[Real], grad_out: &[Real], cols: usize) -> Vec<Real> {
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), dr) in y.chunks(cols).zip(grad_out.chunks(cols)).zip(out.chunks_mut(cols)) {
        let dot: Real = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (g - dot);
        }
    }
    out
}
