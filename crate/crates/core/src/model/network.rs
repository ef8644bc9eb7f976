use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::BatchNormMode;
use crate::tensor::Tensor;

use super::state::{AttentionIx, Bound, ConvBnIx};

/// Graph handles for one attention layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub key_weight: Var,
    pub key_bias: Var,
    pub query_weight: Var,
    pub query_bias: Var,
    pub value_weight: Var,
    pub value_bias: Var,
    pub gamma: Var,
}

/// Output of one attention layer and its row-normalized `c×c` map.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOut {
    pub output: Var,
    pub map: Var,
}

fn conv_bn_act(g: &mut Graph, b: &Bound, x: Var, ix: ConvBnIx, stride: (usize, usize), pad: usize) -> Result<Var> {
    let y = g.conv2d(x, b.vars[ix.weight], None, stride, (pad, pad))?;
    let (scale, shift) = (b.vars[ix.scale], b.vars[ix.shift]);
    let y = match b.mode {
        BatchNormMode::Train => g.batch_norm_train(y, scale, shift, ix.stats)?,
        BatchNormMode::Eval => g.batch_norm_eval(y, scale, shift, &b.state.stats_slots()[ix.stats].stats)?,
    };
    Ok(g.leaky_relu(y, b.state.config().leaky_slope))
}

/// Encoder on a `[5, h, ω]` image: each layer halves the width.
pub fn encoder(g: &mut Graph, b: &Bound, image: Var) -> Result<Var> {
    let cfg = b.state.config();
    let expected = [crate::projection::CHANNELS, cfg.input_height, cfg.input_width];
    if g.value(image).shape() != expected {
        return Err(Error::Dimension(format!(
            "encoder input shape {:?} does not match configured {:?}",
            g.value(image).shape(),
            expected
        )));
    }
    let mut x = image;
    for layer in &b.state.layout.encoder {
        x = conv_bn_act(g, b, x, layer.down, (1, 2), 1)?;
        for res in &layer.residuals {
            let y = conv_bn_act(g, b, x, res.reduce, (1, 1), 0)?;
            let y = conv_bn_act(g, b, y, res.expand, (1, 1), 1)?;
            x = g.add(x, y)?;
        }
    }
    Ok(x)
}

/// `x + γ · softmax_rows(Q Kᵀ) V` over the flattened spatial axis.
pub fn attention_layer(g: &mut Graph, x: Var, w: &AttentionVars) -> Result<AttentionOut> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("attention input must be [c, h, w], got {shape:?}")));
    }
    let flat = [shape[0], shape[1] * shape[2]];
    let mut project = |weight: Var, bias: Var| -> Result<Var> {
        let y = g.conv2d(x, weight, Some(bias), (1, 1), (0, 0))?;
        g.reshape(y, &flat)
    };
    let key = project(w.key_weight, w.key_bias)?;
    let query = project(w.query_weight, w.query_bias)?;
    let value = project(w.value_weight, w.value_bias)?;
    let key_t = g.transpose(key)?;
    let logits = g.matmul(query, key_t)?;
    let map = g.softmax_rows(logits)?;
    let mixed = g.matmul(map, value)?;
    let mixed = g.reshape(mixed, &shape)?;
    let gated = g.scale_by(mixed, w.gamma)?;
    let output = g.add(x, gated)?;
    Ok(AttentionOut { output, map })
}

pub(crate) fn attention_vars(b: &Bound, ix: &AttentionIx) -> AttentionVars {
    AttentionVars {
        key_weight: b.vars[ix.key_weight],
        key_bias: b.vars[ix.key_bias],
        query_weight: b.vars[ix.query_weight],
        query_bias: b.vars[ix.query_bias],
        value_weight: b.vars[ix.value_weight],
        value_bias: b.vars[ix.value_bias],
        gamma: b.vars[ix.gamma],
    }
}

/// The configured stack of attention layers; identity when it is empty.
pub fn attention_network(g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
    b.state
        .layout
        .attention
        .iter()
        .try_fold(x, |x, ix| Ok(attention_layer(g, x, &attention_vars(b, ix))?.output))
}

/// Width pooling to `m/h` columns, channel max, flatten, layer norm.
pub fn head(g: &mut Graph, b: &Bound, features: Var) -> Result<Var> {
    let cfg = b.state.config();
    let pooled = g.adaptive_max_pool_width(features, cfg.pool_width())?;
    let pooled = g.max_pool_over_channels(pooled)?;
    let flat = g.flatten(pooled);
    let layout = &b.state.layout;
    g.layer_normalize(flat, b.vars[layout.norm_weight], b.vars[layout.norm_bias])
}

/// Full network from image leaf to descriptor vector.
pub fn descriptor(g: &mut Graph, b: &Bound, image: Var) -> Result<Var> {
    let x = encoder(g, b, image)?;
    let x = attention_network(g, b, x)?;
    head(g, b, x)
}

/// Weights of one attention layer as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub key_weight: Tensor,
    pub key_bias: Tensor,
    pub query_weight: Tensor,
    pub query_bias: Tensor,
    pub value_weight: Tensor,
    pub value_bias: Tensor,
    pub gamma: crate::Real,
}

impl AttentionWeights {
    /// Identity projections with zero bias.
    pub fn identity(channels: usize, gamma: crate::Real) -> Self {
        let mut eye = Tensor::zeros(&[channels, channels, 1, 1]);
        for i in 0..channels {
            eye.data_mut()[i * channels + i] = 1.0;
        }
        let zero = Tensor::zeros(&[channels]);
        Self {
            key_weight: eye.clone(),
            key_bias: zero.clone(),
            query_weight: eye.clone(),
            query_bias: zero.clone(),
            value_weight: eye,
            value_bias: zero,
            gamma,
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            key_weight: g.constant(self.key_weight.clone()),
            key_bias: g.constant(self.key_bias.clone()),
            query_weight: g.constant(self.query_weight.clone()),
            query_bias: g.constant(self.query_bias.clone()),
            value_weight: g.constant(self.value_weight.clone()),
            value_bias: g.constant(self.value_bias.clone()),
            gamma: g.constant(Tensor::from_vec(vec![self.gamma])),
        }
    }
}
