use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `[c, h, w] -> [h, w]`, channel-wise maximum. Returns the flat input index
/// of each winner (lowest channel on ties) alongside the result.
pub fn max_pool_over_channels(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank(3, "max_pool_over_channels")?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let plane = h * w;
    let x = input.data();
    let mut out = x[..plane].to_vec();
    let mut argmax: Vec<usize> = (0..plane).collect();
    for ch in 1..c {
        for p in 0..plane {
            let v = x[ch * plane + p];
            if v > out[p] {
                out[p] = v;
                argmax[p] = ch * plane + p;
            }
        }
    }
    Ok((Tensor::new(vec![h, w], out)?, argmax))
}

/// Half-open input column range of output bin `i` when pooling `width`
/// columns down to `bins`.
pub fn width_bin(i: usize, width: usize, bins: usize) -> (usize, usize) {
    let start = i * width / bins;
    let end = ((i + 1) * width).div_ceil(bins);
    (start, end)
}

/// `[c, h, w] -> [c, h, bins]`, max over contiguous column bins.
pub fn adaptive_max_pool_width(input: &Tensor, bins: usize) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank(3, "adaptive_max_pool_width")?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if bins == 0 || bins > w {
        return Err(Error::Dimension(format!(
            "adaptive_max_pool_width: output width {bins} must be in 1..={w}"
        )));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * h * bins);
    let mut argmax = Vec::with_capacity(c * h * bins);
    for row in 0..c * h {
        let base = row * w;
        for i in 0..bins {
            let (s, e) = width_bin(i, w, bins);
            let mut best = base + s;
            for k in base + s + 1..base + e {
                if x[k] > x[best] {
                    best = k;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(vec![c, h, bins], out)?, argmax))
}

/// Routes each output gradient to its recorded argmax.
pub(crate) fn scatter_max_backward(argmax: &[usize], grad_out: &[Real], input_len: usize) -> Vec<Real> {
    let mut d = vec![0.0; input_len];
    for (&k, &g) in argmax.iter().zip(grad_out) {
        d[k] += g;
    }
    d
}
