//! The `ExAy` descriptor network: a width-halving convolutional encoder,
//! stacked channel-attention layers and a pooled, layer-normalized head.
//!
//! Graph-level builders live in [`network`]; the free functions here run
//! them in inference mode (batch norm with running statistics) on plain
//! tensors.

mod checkpoint;
mod config;
pub mod network;
mod state;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, WidthPreset, DEFAULT_DESCRIPTOR_DIM, DEFAULT_LEAKY_SLOPE};
pub use network::{AttentionOut, AttentionVars, AttentionWeights};
pub use state::{Bound, ModelState, StatsSlot};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::BatchNormMode;
use crate::projection::{project, ProjectionConfig, RangeImage};
use crate::tensor::{Real, Tensor};

/// Fixed-length place descriptor of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f32>,
    pub frame_id: u64,
}

impl Descriptor {
    pub fn new(values: Vec<f32>, frame_id: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension(format!("descriptor for frame {frame_id} is empty")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "descriptor for frame {frame_id} has non-finite value at {i}"
            )));
        }
        Ok(Self { values, frame_id })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_real(&self) -> Vec<Real> {
        self.values.iter().map(|&v| Real::from(v)).collect()
    }

    pub(crate) fn from_real(values: &[Real], frame_id: u64) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect(), frame_id)
    }
}

fn inference_graph(state: &ModelState) -> (Graph, Bound<'_>) {
    let mut g = Graph::new();
    let b = state.bind(&mut g, BatchNormMode::Eval);
    (g, b)
}

/// Encoder features `[c, h, ω / 2^x]` of one range image.
pub fn encoder_forward(image: &RangeImage, state: &ModelState) -> Result<Tensor> {
    let (mut g, b) = inference_graph(state);
    let x = g.constant(image.tensor.clone());
    let y = network::encoder(&mut g, &b, x)?;
    Ok(g.value(y).clone())
}

fn require_finite(x: &Tensor, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} input contains non-finite values")))
    }
}

/// One attention layer applied to `[c, h, w]` features.
pub fn attention_layer_forward(x: &Tensor, weights: &AttentionWeights) -> Result<Tensor> {
    Ok(attention_layer_with_map(x, weights)?.0)
}

/// Like [`attention_layer_forward`], also returning the `c×c` attention map.
pub fn attention_layer_with_map(x: &Tensor, weights: &AttentionWeights) -> Result<(Tensor, Tensor)> {
    require_finite(x, "attention")?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = weights.bind(&mut g);
    let out = network::attention_layer(&mut g, xv, &w)?;
    Ok((g.value(out.output).clone(), g.value(out.map).clone()))
}

/// The state's attention stack; returns `x` unchanged for `A0`.
pub fn attention_network_forward(x: &Tensor, state: &ModelState) -> Result<Tensor> {
    require_finite(x, "attention network")?;
    let (mut g, b) = inference_graph(state);
    let xv = g.constant(x.clone());
    let y = network::attention_network(&mut g, &b, xv)?;
    Ok(g.value(y).clone())
}

/// Weights of attention layer `layer` as plain tensors.
pub fn attention_weights(state: &ModelState, layer: usize) -> Result<AttentionWeights> {
    let ix = state.layout.attention.get(layer).ok_or_else(|| {
        Error::Config(format!(
            "attention layer {layer} requested from {}",
            state.config().name()
        ))
    })?;
    let p = |i: usize| state.parameters()[i].tensor.clone();
    Ok(AttentionWeights {
        key_weight: p(ix.key_weight),
        key_bias: p(ix.key_bias),
        query_weight: p(ix.query_weight),
        query_bias: p(ix.query_bias),
        value_weight: p(ix.value_weight),
        value_bias: p(ix.value_bias),
        gamma: state.parameters()[ix.gamma].tensor.data()[0],
    })
}

/// Descriptor head on `[c, h, δ]` features.
pub fn output_head(features: &Tensor, state: &ModelState, frame_id: u64) -> Result<Descriptor> {
    require_finite(features, "output head")?;
    let (mut g, b) = inference_graph(state);
    let x = g.constant(features.clone());
    let d = network::head(&mut g, &b, x)?;
    Descriptor::from_real(g.value(d).data(), frame_id)
}

/// Descriptor of an already projected range image.
pub fn describe_image(image: &RangeImage, state: &ModelState) -> Result<Descriptor> {
    let (mut g, b) = inference_graph(state);
    let x = g.constant(image.tensor.clone());
    let d = network::descriptor(&mut g, &b, x)?;
    Descriptor::from_real(g.value(d).data(), image.frame_id)
}

/// Projects `cloud` and runs the full network on it.
pub fn describe(cloud: &PointCloud, state: &ModelState, projection: &ProjectionConfig) -> Result<Descriptor> {
    describe_image(&project(cloud, projection)?, state)
}
