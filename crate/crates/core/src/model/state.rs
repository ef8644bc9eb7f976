use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{BatchNormMode, RunningStats};
use crate::optim::Parameter;
use crate::tensor::{Real, Tensor};

use super::config::ModelConfig;

/// Parameter and stats-slot indices of one conv → batch-norm pair.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvBnIx {
    pub weight: usize,
    pub scale: usize,
    pub shift: usize,
    pub stats: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ResidualIx {
    pub reduce: ConvBnIx,
    pub expand: ConvBnIx,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayerIx {
    pub down: ConvBnIx,
    pub residuals: Vec<ResidualIx>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionIx {
    pub key_weight: usize,
    pub key_bias: usize,
    pub query_weight: usize,
    pub query_bias: usize,
    pub value_weight: usize,
    pub value_bias: usize,
    pub gamma: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub encoder: Vec<EncoderLayerIx>,
    pub attention: Vec<AttentionIx>,
    pub norm_weight: usize,
    pub norm_bias: usize,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsSlot {
    pub name: String,
    pub stats: RunningStats,
}

/// Every trainable tensor and batch-norm buffer of an `ExAy` network.
#[derive(Clone, Debug)]
pub struct ModelState {
    config: ModelConfig,
    seed: u64,
    params: Vec<Parameter>,
    stats: Vec<StatsSlot>,
    pub(crate) layout: Layout,
}

/// Per-name RNG stream, so a tensor's initial value depends only on
/// `(seed, name, shape)` and not on which other layers exist.
fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

struct Builder {
    seed: u64,
    params: Vec<Parameter>,
    stats: Vec<StatsSlot>,
}

impl Builder {
    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(Parameter::new(name, tensor));
        self.params.len() - 1
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = (1.0 / fan_in as Real).sqrt();
        let mut rng = name_rng(self.seed, &name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("positive shape");
        self.push(name, t)
    }

    fn filled(&mut self, name: String, shape: &[usize], value: Real) -> usize {
        self.push(name, Tensor::full(shape, value))
    }

    fn conv_bn(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> ConvBnIx {
        let weight = self.uniform(format!("{prefix}.weight"), &[c_out, c_in, k, k], c_in * k * k);
        let scale = self.filled(format!("{prefix}.bn.scale"), &[c_out], 1.0);
        let shift = self.filled(format!("{prefix}.bn.shift"), &[c_out], 0.0);
        self.stats.push(StatsSlot {
            name: format!("{prefix}.bn"),
            stats: RunningStats::new(c_out),
        });
        ConvBnIx {
            weight,
            scale,
            shift,
            stats: self.stats.len() - 1,
        }
    }
}

impl ModelState {
    /// Fresh network: convs uniform in ±sqrt(1/fan_in), batch norms and
    /// the layer norm at identity, every γ at 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            seed,
            params: Vec::new(),
            stats: Vec::new(),
        };
        let mut c_in = crate::projection::CHANNELS;
        let mut encoder = Vec::with_capacity(config.encoder_depth);
        for (i, (&width, &blocks)) in config.widths.iter().zip(&config.blocks).enumerate() {
            let down = b.conv_bn(&format!("enc{i}.down"), c_in, width, 3);
            let half = (width / 2).max(1);
            let residuals = (0..blocks)
                .map(|j| ResidualIx {
                    reduce: b.conv_bn(&format!("enc{i}.res{j}.reduce"), width, half, 1),
                    expand: b.conv_bn(&format!("enc{i}.res{j}.expand"), half, width, 3),
                })
                .collect();
            encoder.push(EncoderLayerIx { down, residuals });
            c_in = width;
        }
        let c = config.feature_channels();
        let attention = (0..config.attention_depth)
            .map(|k| {
                let mut proj = |role: &str| {
                    (
                        b.uniform(format!("att{k}.{role}.weight"), &[c, c, 1, 1], c),
                        b.uniform(format!("att{k}.{role}.bias"), &[c], c),
                    )
                };
                let (key_weight, key_bias) = proj("key");
                let (query_weight, query_bias) = proj("query");
                let (value_weight, value_bias) = proj("value");
                let gamma = b.filled(format!("att{k}.gamma"), &[1], 0.0);
                AttentionIx {
                    key_weight,
                    key_bias,
                    query_weight,
                    query_bias,
                    value_weight,
                    value_bias,
                    gamma,
                }
            })
            .collect();
        let m = config.descriptor_dim;
        let norm_weight = b.filled("head.norm.weight".into(), &[m], 1.0);
        let norm_bias = b.filled("head.norm.bias".into(), &[m], 0.0);
        Ok(Self {
            config,
            seed,
            params: b.params,
            stats: b.stats,
            layout: Layout {
                encoder,
                attention,
                norm_weight,
                norm_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn stats_slots(&self) -> &[StatsSlot] {
        &self.stats
    }

    #[cfg(test)]
    pub(crate) fn stats_slots_mut(&mut self) -> &mut [StatsSlot] {
        &mut self.stats
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Current γ of each attention layer.
    pub fn gammas(&self) -> Vec<Real> {
        self.layout
            .attention
            .iter()
            .map(|a| self.params[a.gamma].tensor.data()[0])
            .collect()
    }

    pub fn set_gammas(&mut self, value: Real) {
        for a in self.layout.attention.clone() {
            self.params[a.gamma].tensor.data_mut()[0] = value;
        }
    }

    /// Names of the γ parameters.
    pub fn gamma_names(&self) -> Vec<String> {
        self.layout
            .attention
            .iter()
            .map(|a| self.params[a.gamma].name.clone())
            .collect()
    }

    /// Records every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph, mode: BatchNormMode) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| graph.param(i, &p.tensor))
            .collect();
        Bound { state: self, vars, mode }
    }

    /// Folds the batch statistics recorded by train-mode passes on `graph`
    /// into the running stats, in recording order.
    pub fn apply_bn_updates(&mut self, graph: &Graph) {
        for (slot, batch) in graph.bn_updates() {
            self.stats[*slot].stats.update(&batch.mean, &batch.unbiased_var);
        }
    }

    /// Replaces every parameter gradient with the sum of those on `graph`.
    pub fn load_grads(&mut self, graph: &Graph) {
        for p in &mut self.params {
            p.tensor.grad = Some(vec![0.0; p.tensor.len()]);
        }
        for (i, g) in graph.param_grads() {
            self.params[i].tensor.accumulate_grad(g);
        }
    }

    /// Replaces parameters and stats wholesale, keeping config and layout.
    pub(crate) fn restore(&mut self, params: Vec<Tensor>, stats: Vec<RunningStats>) -> Result<()> {
        if params.len() != self.params.len() || stats.len() != self.stats.len() {
            return Err(Error::Contract("restore with mismatched parameter set".into()));
        }
        for (p, t) in self.params.iter_mut().zip(params) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter '{}' expects shape {:?}, got {:?}",
                    p.name,
                    p.tensor.shape(),
                    t.shape()
                )));
            }
            *p = Parameter::new(p.name.clone(), t);
        }
        for (s, r) in self.stats.iter_mut().zip(stats) {
            s.stats = r;
        }
        Ok(())
    }
}

/// A [`ModelState`] whose parameters are leaves of one graph.
pub struct Bound<'a> {
    pub(crate) state: &'a ModelState,
    pub(crate) vars: Vec<Var>,
    pub(crate) mode: BatchNormMode,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Option<Var> {
        let i = self.state.params.iter().position(|p| p.name == name)?;
        Some(self.vars[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WidthPreset;

    fn cfg(x: usize, y: usize) -> ModelConfig {
        ModelConfig::preset(WidthPreset::Toy, x, y, 8, 64, 16).unwrap()
    }

    #[test]
    fn parameter_set_matches_config() {
        let s = ModelState::new(cfg(2, 3), 1).unwrap();
        let names: Vec<&str> = s.parameters().iter().map(|p| p.name.as_str()).collect();
        // two layers of (down + one residual) = 3 conv-bn each, 3 tensors per conv-bn
        let enc = names.iter().filter(|n| n.starts_with("enc")).count();
        assert_eq!(enc, 2 * 3 * 3);
        assert_eq!(names.iter().filter(|n| n.starts_with("att")).count(), 3 * 7);
        assert_eq!(s.stats_slots().len(), 6);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(s.gammas(), vec![0.0; 3]);
        for g in s.gamma_names() {
            assert_eq!(s.parameter(&g).unwrap().tensor.shape(), [1]);
        }
    }

    #[test]
    fn shared_names_share_values_across_depths() {
        let a = ModelState::new(cfg(2, 0), 9).unwrap();
        let b = ModelState::new(cfg(2, 4), 9).unwrap();
        for p in a.parameters() {
            assert_eq!(b.parameter(&p.name).unwrap().tensor, p.tensor, "{}", p.name);
        }
        let c = ModelState::new(cfg(2, 0), 10).unwrap();
        assert_ne!(c.parameter("enc0.down.weight"), a.parameter("enc0.down.weight"));
    }

    #[test]
    fn init_bounds() {
        let s = ModelState::new(cfg(1, 1), 3).unwrap();
        let w = &s.parameter("enc0.down.weight").unwrap().tensor;
        assert_eq!(w.shape(), [4, 5, 3, 3]);
        let bound = (1.0 / 45.0 as Real).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        let reduce = &s.parameter("enc0.res0.reduce.weight").unwrap().tensor;
        assert_eq!(reduce.shape(), [2, 4, 1, 1]);
    }
}
