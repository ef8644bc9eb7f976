use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Geometry shared by the conv forward and backward kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if input.len() != 3 {
            return Err(Error::Dimension(format!(
                "conv2d input must be [c_in, h, w], got {input:?}"
            )));
        }
        if weight.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d weight must be [c_out, c_in, kh, kw], got {weight:?}"
            )));
        }
        if input[0] != weight[1] {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input axis 0 is {} but weight axis 1 is {}",
                input[0], weight[1]
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Dimension(format!(
                "conv2d stride must be >= 1, got {stride:?}"
            )));
        }
        let (kh, kw) = (weight[2], weight[3]);
        if input[1] + 2 * padding.0 < kh {
            return Err(Error::Dimension(format!(
                "conv2d kernel height {kh} exceeds padded input height {}",
                input[1] + 2 * padding.0
            )));
        }
        if input[2] + 2 * padding.1 < kw {
            return Err(Error::Dimension(format!(
                "conv2d kernel width {kw} exceeds padded input width {}",
                input[2] + 2 * padding.1
            )));
        }
        Ok(Self {
            in_channels: input[0],
            in_h: input[1],
            in_w: input[2],
            out_channels: weight[0],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (input[1] + 2 * padding.0 - kh) / stride.0 + 1,
            out_w: (input[2] + 2 * padding.1 - kw) / stride.1 + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_h, self.out_w]
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
        (iy >= 0 && (iy as usize) < self.in_h).then_some(iy as usize)
    }

    /// Output column range whose input column `ox*sw + kx - pw` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let (sw, pw) = (self.stride.1, self.padding.1);
        let lo = if pw > kx { (pw - kx).div_ceil(sw) } else { 0 };
        let hi = (self.in_w + pw).saturating_sub(kx).div_ceil(sw).min(self.out_w);
        (lo, hi.max(lo))
    }
}

/// 2-D cross-correlation of a single `[c_in, h, w]` image.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let geo = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [geo.out_channels] {
            return Err(Error::Dimension(format!(
                "conv2d bias shape {:?} does not match weight axis 0 ({})",
                b.shape(),
                geo.out_channels
            )));
        }
    }
    let out = conv2d_forward(&geo, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(geo.out_shape().to_vec(), out)
}

pub(crate) fn conv2d_forward(
    geo: &ConvGeometry,
    input: &[Real],
    weight: &[Real],
    bias: Option<&[Real]>,
) -> Vec<Real> {
    let plane_in = geo.in_h * geo.in_w;
    let plane_out = geo.out_h * geo.out_w;
    let mut out = vec![0.0; geo.out_channels * plane_out];
    let sw = geo.stride.1;
    for o in 0..geo.out_channels {
        let dst = &mut out[o * plane_out..(o + 1) * plane_out];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..geo.in_channels {
            let src = &input[c * plane_in..(c + 1) * plane_in];
            for ky in 0..geo.kernel_h {
                for kx in 0..geo.kernel_w {
                    let w = weight[((o * geo.in_channels + c) * geo.kernel_h + ky) * geo.kernel_w + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let (lo, hi) = geo.col_range(kx);
                    for oy in 0..geo.out_h {
                        let Some(iy) = geo.in_row(oy, ky) else { continue };
                        let row_in = &src[iy * geo.in_w..(iy + 1) * geo.in_w];
                        let row_out = &mut dst[oy * geo.out_w..(oy + 1) * geo.out_w];
                        for ox in lo..hi {
                            row_out[ox] += w * row_in[ox * sw + kx - geo.padding.1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a conv2d call: `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward(
    geo: &ConvGeometry,
    input: &[Real],
    weight: &[Real],
    grad_out: &[Real],
    want_input: bool,
) -> (Option<Vec<Real>>, Vec<Real>, Vec<Real>) {
    let plane_in = geo.in_h * geo.in_w;
    let plane_out = geo.out_h * geo.out_w;
    let sw = geo.stride.1;
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    let mut d_weight = vec![0.0; weight.len()];
    let mut d_bias = vec![0.0; geo.out_channels];
    for o in 0..geo.out_channels {
        let g = &grad_out[o * plane_out..(o + 1) * plane_out];
        d_bias[o] = g.iter().sum();
        for c in 0..geo.in_channels {
            let src = &input[c * plane_in..(c + 1) * plane_in];
            for ky in 0..geo.kernel_h {
                for kx in 0..geo.kernel_w {
                    let widx = ((o * geo.in_channels + c) * geo.kernel_h + ky) * geo.kernel_w + kx;
                    let w = weight[widx];
                    let (lo, hi) = geo.col_range(kx);
                    let mut acc = 0.0;
                    for oy in 0..geo.out_h {
                        let Some(iy) = geo.in_row(oy, ky) else { continue };
                        let g_row = &g[oy * geo.out_w..(oy + 1) * geo.out_w];
                        let base = iy * geo.in_w;
                        for ox in lo..hi {
                            let ix = ox * sw + kx - geo.padding.1;
                            acc += g_row[ox] * src[base + ix];
                        }
                        if let Some(di) = d_input.as_mut() {
                            let di = &mut di[c * plane_in + base..c * plane_in + base + geo.in_w];
                            for ox in lo..hi {
                                di[ox * sw + kx - geo.padding.1] += w * g_row[ox];
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}
