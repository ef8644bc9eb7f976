use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.1;
pub const LN_EPS: Real = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance kept by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average update from one batch's statistics.
    /// `var` is the unbiased variance estimate of the batch.
    pub fn update(&mut self, mean: &[Real], var: &[Real]) {
        for (r, m) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.var.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// Saved forward state of a train-mode normalization, needed by backward.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub xhat: Vec<Real>,
    pub inv_std: Vec<Real>,
}

/// Batch statistics produced by a train-mode batch-norm forward.
#[derive(Clone, Debug)]
pub(crate) struct BatchStats {
    pub mean: Vec<Real>,
    pub unbiased_var: Vec<Real>,
}

fn check_bn_shapes(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<usize> {
    input.expect_rank(3, "batch_norm input")?;
    let c = input.shape()[0];
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::Dimension(format!(
            "batch_norm affine shapes {:?}/{:?} do not match channel axis ({c})",
            scale.shape(),
            shift.shape()
        )));
    }
    Ok(c)
}

/// Batch normalization of a single `[c, h, w]` sample over spatial positions.
///
/// Train mode normalizes with the sample's per-channel statistics and folds
/// them into `stats`; eval mode normalizes with `stats`.
pub fn batch_norm(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    stats: &mut RunningStats,
    mode: BatchNormMode,
) -> Result<Tensor> {
    let c = check_bn_shapes(input, scale, shift)?;
    if stats.channels() != c {
        return Err(Error::Dimension(format!(
            "batch_norm running stats have {} channels, input has {c}",
            stats.channels()
        )));
    }
    let out = match mode {
        BatchNormMode::Train => {
            let (out, _, batch) = bn_train_forward(input.data(), c, scale.data(), shift.data());
            stats.update(&batch.mean, &batch.unbiased_var);
            out
        }
        BatchNormMode::Eval => bn_eval_forward(input.data(), c, scale.data(), shift.data(), stats),
    };
    Tensor::new(input.shape().to_vec(), out)
}

pub(crate) fn bn_train_forward(
    x: &[Real],
    channels: usize,
    scale: &[Real],
    shift: &[Real],
) -> (Vec<Real>, NormCache, BatchStats) {
    let plane = x.len() / channels;
    let n = plane as Real;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; channels];
    let mut means = vec![0.0; channels];
    let mut unbiased = vec![0.0; channels];
    for ch in 0..channels {
        let xs = &x[ch * plane..(ch + 1) * plane];
        let mean = xs.iter().sum::<Real>() / n;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        for (i, v) in xs.iter().enumerate() {
            let h = (v - mean) * istd;
            xhat[ch * plane + i] = h;
            out[ch * plane + i] = scale[ch] * h + shift[ch];
        }
        inv_std[ch] = istd;
        means[ch] = mean;
        unbiased[ch] = if plane > 1 { var * n / (n - 1.0) } else { var };
    }
    (
        out,
        NormCache { xhat, inv_std },
        BatchStats {
            mean: means,
            unbiased_var: unbiased,
        },
    )
}

pub(crate) fn bn_eval_forward(
    x: &[Real],
    channels: usize,
    scale: &[Real],
    shift: &[Real],
    stats: &RunningStats,
) -> Vec<Real> {
    let plane = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    for ch in 0..channels {
        let istd = 1.0 / (stats.var[ch] + BN_EPS).sqrt();
        for i in 0..plane {
            let k = ch * plane + i;
            out[k] = scale[ch] * (x[k] - stats.mean[ch]) * istd + shift[ch];
        }
    }
    out
}

/// Backward of a normalize-then-affine over `groups` contiguous groups.
/// Returns `(d_input, d_scale, d_shift)`; scale/shift are per group or, when
/// `elementwise_affine`, per element.
pub(crate) fn norm_backward(
    cache: &NormCache,
    grad_out: &[Real],
    scale: &[Real],
    groups: usize,
    elementwise_affine: bool,
) -> (Vec<Real>, Vec<Real>, Vec<Real>) {
    let len = grad_out.len();
    let plane = len / groups;
    let n = plane as Real;
    let mut d_input = vec![0.0; len];
    let mut d_scale = vec![0.0; scale.len()];
    let mut d_shift = vec![0.0; scale.len()];
    let mut dxhat = vec![0.0; plane];
    for g in 0..groups {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for i in 0..plane {
            let k = g * plane + i;
            let a = if elementwise_affine { k } else { g };
            let dy = grad_out[k];
            d_scale[a] += dy * cache.xhat[k];
            d_shift[a] += dy;
            let d = dy * scale[a];
            dxhat[i] = d;
            sum_d += d;
            sum_dx += d * cache.xhat[k];
        }
        let istd = cache.inv_std[g];
        for i in 0..plane {
            let k = g * plane + i;
            d_input[k] = istd / n * (n * dxhat[i] - sum_d - cache.xhat[k] * sum_dx);
        }
    }
    (d_input, d_scale, d_shift)
}

/// Normalizes a flat vector to zero mean / unit variance, then applies an
/// elementwise affine `weight * xhat + bias`.
pub fn layer_normalize(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    if weight.len() != n || bias.len() != n {
        return Err(Error::Dimension(format!(
            "layer_normalize affine lengths {}/{} do not match input length {n}",
            weight.len(),
            bias.len()
        )));
    }
    let (out, _) = ln_forward(input.data(), weight.data(), bias.data());
    Tensor::new(input.shape().to_vec(), out)
}

pub(crate) fn ln_forward(x: &[Real], weight: &[Real], bias: &[Real]) -> (Vec<Real>, NormCache) {
    let n = x.len() as Real;
    let mean = x.iter().sum::<Real>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    let istd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<Real> = x.iter().map(|v| (v - mean) * istd).collect();
    let out = xhat
        .iter()
        .zip(weight.iter().zip(bias))
        .map(|(h, (w, b))| w * h + b)
        .collect();
    (
        out,
        NormCache {
            xhat,
            inv_std: vec![istd],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_centers_to_zero() {
        let x = Tensor::full(&[2, 3, 4], 7.0);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(
            &x,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            &mut stats,
            BatchNormMode::Train,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        // running stats moved toward the batch
        assert!((stats.mean[0] - 0.7).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn affine_contract_on_normalized_data() {
        // channel with mean 0 and (biased) std 1
        let x = Tensor::new(vec![1, 1, 4], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm(
            &x,
            &Tensor::full(&[1], 2.0),
            &Tensor::full(&[1], 3.0),
            &mut stats,
            BatchNormMode::Train,
        )
        .unwrap();
        let mean = y.data().iter().sum::<Real>() / 4.0;
        let std = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<Real>() / 4.0).sqrt();
        assert!((mean - 3.0).abs() < 1e-12);
        assert!((std - 2.0).abs() < 1e-4);
    }

    #[test]
    fn eval_mode_before_training_uses_initial_stats() {
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm(
            &x,
            &Tensor::full(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &mut stats,
            BatchNormMode::Eval,
        )
        .unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b * k).abs() < 1e-12);
        }
        assert_eq!(stats, RunningStats::new(1));
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let y = layer_normalize(
            &Tensor::from_vec(vec![1.0; 4]),
            &Tensor::from_vec(vec![1.0; 4]),
            &Tensor::from_vec(vec![0.0; 4]),
        )
        .unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn bn_shape_errors() {
        let mut stats = RunningStats::new(2);
        assert!(batch_norm(
            &Tensor::zeros(&[2, 2, 2]),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[2]),
            &mut stats,
            BatchNormMode::Eval,
        )
        .is_err());
        let mut stats = RunningStats::new(3);
        assert!(batch_norm(
            &Tensor::zeros(&[2, 2, 2]),
            &Tensor::zeros(&[2]),
            &Tensor::zeros(&[2]),
            &mut stats,
            BatchNormMode::Eval,
        )
        .is_err());
    }
}
