//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use attnet::data::{generate_synthetic_sequence, Sequence, SyntheticConfig};
use attnet::gradcheck::{check_gradient, Differentiable, GradientReport, GraphOp};
use attnet::graph::{Graph, Var};
use attnet::model::{network, ModelConfig, ModelState, WidthPreset};
use attnet::ops::{BatchNormMode, RunningStats};
use attnet::projection::{ProjectionConfig, RangeImage, CHANNELS};
use attnet::training::{triplet_loss, LabeledSequence};
use attnet::{Real, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOLERANCE: Real = 1e-4;
pub const MODEL_TOLERANCE: Real = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so kinks at 0 stay out of finite-difference reach.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(0.1..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced well apart, so max-pool winners are stable under perturbation.
pub fn spread(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<Real> = (0..n).map(|i| i as Real * 0.05 - 1.0).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn case<F>(name: &'static str, inputs: Vec<Tensor>, f: F) -> (&'static str, GradientReport)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    (name, check_gradient(&GraphOp(f), &inputs, OP_TOLERANCE))
}

/// Finite-difference reports for every differentiable graph op.
pub fn op_gradient_reports(seed: u64) -> Vec<(&'static str, GradientReport)> {
    let mut r = rng(seed);
    let r = &mut r;
    let stats = RunningStats {
        mean: vec![0.2, -0.1, 0.05],
        var: vec![0.8, 1.3, 0.5],
    };
    vec![
        case(
            "conv2d 3x3 pad 1 with bias",
            vec![uniform(r, &[2, 5, 6], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1)),
        ),
        case(
            "conv2d 3x3 stride (1,2)",
            vec![uniform(r, &[2, 4, 8], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], None, (1, 2), (1, 1)),
        ),
        case(
            "conv2d 1x1",
            vec![uniform(r, &[3, 2, 4], -1.0, 1.0), uniform(r, &[2, 3, 1, 1], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (0, 0)),
        ),
        case(
            "batch_norm train",
            vec![uniform(r, &[3, 4, 5], -2.0, 2.0), uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5)],
            |g, v| g.batch_norm_train(v[0], v[1], v[2], 0),
        ),
        case(
            "batch_norm eval",
            vec![uniform(r, &[3, 2, 3], -2.0, 2.0), uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5)],
            move |g, v| g.batch_norm_eval(v[0], v[1], v[2], &stats),
        ),
        case("leaky_relu", vec![away_from_zero(r, &[24])], |g, v| Ok(g.leaky_relu(v[0], 0.1))),
        case(
            "add",
            vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)],
            |g, v| g.add(v[0], v[1]),
        ),
        case(
            "scale_by",
            vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1], -1.0, 1.0)],
            |g, v| g.scale_by(v[0], v[1]),
        ),
        case("affine", vec![uniform(r, &[5], -1.0, 1.0)], |g, v| Ok(g.affine(v[0], -1.5, 0.3))),
        case("hinge", vec![away_from_zero(r, &[12])], |g, v| Ok(g.hinge(v[0], 0.0))),
        case(
            "matmul",
            vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)],
            |g, v| g.matmul(v[0], v[1]),
        ),
        case("transpose", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.transpose(v[0])),
        case("softmax_rows", vec![uniform(r, &[3, 5], -2.0, 2.0)], |g, v| g.softmax_rows(v[0])),
        case("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], |g, v| g.reshape(v[0], &[3, 4])),
        case("flatten", vec![uniform(r, &[2, 2, 3], -1.0, 1.0)], |g, v| Ok(g.flatten(v[0]))),
        case("max_pool_over_channels", vec![spread(r, &[3, 2, 5])], |g, v| {
            g.max_pool_over_channels(v[0])
        }),
        case("adaptive_max_pool_width", vec![spread(r, &[2, 3, 10])], |g, v| {
            g.adaptive_max_pool_width(v[0], 4)
        }),
        case(
            "layer_normalize",
            vec![uniform(r, &[10], -2.0, 2.0), uniform(r, &[10], 0.5, 1.5), uniform(r, &[10], -0.5, 0.5)],
            |g, v| g.layer_normalize(v[0], v[1], v[2]),
        ),
        case(
            "cosine_similarity",
            vec![uniform(r, &[9], -1.0, 1.0), uniform(r, &[9], -1.0, 1.0)],
            |g, v| g.cosine_similarity(v[0], v[1], 1e-8),
        ),
        case("dot_const", vec![uniform(r, &[4], -1.0, 1.0)], |g, v| {
            g.dot_const(v[0], vec![0.5, -1.0, 2.0, 0.25])
        }),
        {
            let c = 4;
            let w = |r: &mut ChaCha8Rng| uniform(r, &[c, c, 1, 1], -1.0, 1.0);
            let b = |r: &mut ChaCha8Rng| uniform(r, &[c], -0.5, 0.5);
            let inputs = vec![
                uniform(r, &[c, 2, 3], -1.0, 1.0),
                w(r),
                b(r),
                w(r),
                b(r),
                w(r),
                b(r),
                Tensor::from_vec(vec![0.7]),
            ];
            case("attention layer", inputs, |g, v| {
                let vars = network::AttentionVars {
                    key_weight: v[1],
                    key_bias: v[2],
                    query_weight: v[3],
                    query_bias: v[4],
                    value_weight: v[5],
                    value_bias: v[6],
                    gamma: v[7],
                };
                Ok(network::attention_layer(g, v[0], &vars)?.output)
            })
        },
    ]
}

/// Toy `E2A1` geometry used by the end-to-end gradient check.
pub fn gradient_model() -> ModelState {
    let cfg = ModelConfig::preset(WidthPreset::Toy, 2, 1, 8, 32, 32).unwrap();
    let mut state = ModelState::new(cfg, 11).unwrap();
    // a zero gate would leave the attention projections without gradient
    state.set_gammas(0.5);
    state
}

/// Triplet loss of a whole model as a function of all its parameters.
pub struct ModelLoss {
    pub state: ModelState,
    pub images: [Tensor; 3],
    pub margin: Real,
}

impl ModelLoss {
    pub fn new(state: ModelState, seed: u64) -> Self {
        let cfg = state.config().clone();
        let mut r = rng(seed);
        let shape = [CHANNELS, cfg.input_height, cfg.input_width];
        let images = [0, 1, 2].map(|_| uniform(&mut r, &shape, -1.0, 1.0));
        Self {
            state,
            images,
            // keeps the negative hinge active at this initialization
            margin: -1.0,
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.state.parameters().iter().map(|p| p.tensor.clone()).collect()
    }

    fn build(&self, params: &[Tensor]) -> Result<(Graph, Var)> {
        let mut state = self.state.clone();
        for (p, t) in state.parameters_mut().iter_mut().zip(params) {
            p.tensor = t.clone();
        }
        let mut g = Graph::new();
        let b = state.bind(&mut g, BatchNormMode::Train);
        let mut outs = Vec::with_capacity(3);
        for image in &self.images {
            let x = g.constant(image.clone());
            outs.push(network::descriptor(&mut g, &b, x)?);
        }
        drop(b);
        let t = triplet_loss(&mut g, outs[0], outs[1], outs[2], self.margin, 1e-8)?;
        Ok((g, t.loss))
    }
}

impl Differentiable for ModelLoss {
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (g, loss) = self.build(inputs)?;
        Ok(g.value(loss).clone())
    }

    fn vjp(&self, inputs: &[Tensor], seed: &[Real]) -> Result<Vec<Vec<Real>>> {
        let (mut g, loss) = self.build(inputs)?;
        g.backward_with(loss, seed)?;
        let mut grads: Vec<Vec<Real>> = inputs.iter().map(|t| vec![0.0; t.len()]).collect();
        for (i, d) in g.param_grads() {
            for (a, b) in grads[i].iter_mut().zip(d) {
                *a += b;
            }
        }
        Ok(grads)
    }
}

pub fn end_to_end_gradient_report() -> GradientReport {
    let objective = ModelLoss::new(gradient_model(), 5);
    let params = objective.parameters();
    check_gradient(&objective, &params, MODEL_TOLERANCE)
}

/// A `[5, h, w]` image of uniform noise with every pixel marked valid.
pub fn noise_image(rng: &mut impl Rng, h: usize, w: usize, frame_id: u64) -> RangeImage {
    RangeImage {
        tensor: uniform(rng, &[CHANNELS, h, w], -1.0, 10.0),
        valid_mask: vec![true; h * w],
        frame_id,
    }
}

/// Synthetic loop courses used by the learning and determinism checks.
pub struct DeskBenchmark {
    pub projection: ProjectionConfig,
    pub model: ModelConfig,
    pub sequences: Vec<LabeledSequence>,
}

pub const DESK_LAP_OFFSET: f64 = 0.5;

pub fn desk_synthetic_config(seed: u64, frames: usize) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        frames,
        lap_offset: DESK_LAP_OFFSET,
        ..SyntheticConfig::default()
    }
}

pub fn desk_benchmark(count: usize, frames: usize, seed: u64) -> DeskBenchmark {
    let projection = ProjectionConfig::new(256, 16, 3.0, 25.0).unwrap();
    let model = ModelConfig::preset(WidthPreset::Toy, 2, 1, 16, 256, 256).unwrap();
    let sequences = (0..count)
        .map(|i| {
            let cfg = desk_synthetic_config(seed + i as u64, frames);
            let seq = Sequence::from_synthetic(format!("{i:02}"), generate_synthetic_sequence(&cfg).unwrap()).unwrap();
            LabeledSequence::new(seq, 6.0, 100).unwrap()
        })
        .collect();
    DeskBenchmark {
        projection,
        model,
        sequences,
    }
}
