//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every op appends one node holding its output value. Inputs always precede
//! their consumers, so a single reverse sweep over the tape visits each op
//! exactly once.

use crate::error::{Error, Result};
use crate::ops::activation::{leaky_relu_backward, softmax_rows_backward};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::linalg::{matmul_nt, matmul_tn, transpose_raw};
use crate::ops::norm::{bn_eval_forward, bn_train_forward, ln_forward, norm_backward, BatchStats, NormCache, RunningStats, BN_EPS};
use crate::ops::pool::{adaptive_max_pool_width, max_pool_over_channels, scatter_max_backward};
use crate::ops::similarity::cosine_backward;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    },
    BatchNormTrain {
        input: Var,
        scale: Var,
        shift: Var,
        cache: NormCache,
    },
    BatchNormEval {
        input: Var,
        scale: Var,
        shift: Var,
        mean: Vec<Real>,
        inv_std: Vec<Real>,
    },
    LeakyRelu {
        input: Var,
        slope: Real,
    },
    Add {
        a: Var,
        b: Var,
    },
    ScaleBy {
        input: Var,
        factor: Var,
    },
    Affine {
        input: Var,
        mul: Real,
    },
    Hinge {
        input: Var,
        margin: Real,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        input: Var,
        rows: usize,
        cols: usize,
    },
    SoftmaxRows {
        input: Var,
        cols: usize,
    },
    Reshape {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    LayerNorm {
        input: Var,
        weight: Var,
        bias: Var,
        cache: NormCache,
    },
    Cosine {
        a: Var,
        b: Var,
        stabilizer: Real,
    },
    DotConst {
        input: Var,
        weights: Vec<Real>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

/// Operation tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bn_updates: Vec<(usize, BatchStats)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node; gradients flow into it iff `tensor.requires_grad`.
    pub fn input(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    /// Leaf bound to trainable parameter `index`.
    pub fn param(&mut self, index: usize, tensor: &Tensor) -> Var {
        let v = self.input(tensor.clone().with_requires_grad(true));
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Gradients accumulated on parameter leaves, by parameter index.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[Real])> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.value.grad.as_deref()?)))
    }

    /// Batch statistics from train-mode batch norms, keyed by stats slot.
    pub(crate) fn bn_updates(&self) -> &[(usize, BatchStats)] {
        &self.bn_updates
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let geo = ConvGeometry::new(self.value(input).shape(), self.value(weight).shape(), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geo.out_channels] {
                return Err(Error::Dimension(format!(
                    "conv2d bias shape {:?} does not match weight axis 0 ({})",
                    self.value(b).shape(),
                    geo.out_channels
                )));
            }
        }
        let out = conv2d_forward(
            &geo,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(geo.out_shape().to_vec(), out)?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.push(t, Op::Conv2d { input, weight, bias, geo }, &ins))
    }

    fn bn_check(&self, input: Var, scale: Var, shift: Var) -> Result<usize> {
        let x = self.value(input);
        x.expect_rank(3, "batch_norm input")?;
        let c = x.shape()[0];
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(Error::Dimension(format!(
                "batch_norm affine shapes {:?}/{:?} do not match channel axis ({c})",
                self.value(scale).shape(),
                self.value(shift).shape()
            )));
        }
        Ok(c)
    }

    /// Train-mode batch norm; batch statistics are recorded under `slot`.
    pub fn batch_norm_train(&mut self, input: Var, scale: Var, shift: Var, slot: usize) -> Result<Var> {
        let c = self.bn_check(input, scale, shift)?;
        let (out, cache, stats) = bn_train_forward(
            self.value(input).data(),
            c,
            self.value(scale).data(),
            self.value(shift).data(),
        );
        self.bn_updates.push((slot, stats));
        let t = Tensor::new(self.value(input).shape().to_vec(), out)?;
        Ok(self.push(t, Op::BatchNormTrain { input, scale, shift, cache }, &[input, scale, shift]))
    }

    pub fn batch_norm_eval(&mut self, input: Var, scale: Var, shift: Var, stats: &RunningStats) -> Result<Var> {
        let c = self.bn_check(input, scale, shift)?;
        if stats.channels() != c {
            return Err(Error::Dimension(format!(
                "batch_norm running stats have {} channels, input has {c}",
                stats.channels()
            )));
        }
        let out = bn_eval_forward(
            self.value(input).data(),
            c,
            self.value(scale).data(),
            self.value(shift).data(),
            stats,
        );
        let t = Tensor::new(self.value(input).shape().to_vec(), out)?;
        let inv_std = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let op = Op::BatchNormEval {
            input,
            scale,
            shift,
            mean: stats.mean.clone(),
            inv_std,
        };
        Ok(self.push(t, op, &[input, scale, shift]))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: Real) -> Var {
        let t = crate::ops::leaky_relu(self.value(input), slope);
        self.push(t, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "add: shapes {:?} and {:?} differ",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add { a, b }, &[a, b]))
    }

    /// Multiplies every element of `input` by the single-element `factor`.
    pub fn scale_by(&mut self, input: Var, factor: Var) -> Result<Var> {
        if self.value(factor).len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by: factor must hold one element, got shape {:?}",
                self.value(factor).shape()
            )));
        }
        let f = self.value(factor).data()[0];
        let x = self.value(input);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| f * v).collect())?;
        Ok(self.push(t, Op::ScaleBy { input, factor }, &[input, factor]))
    }

    /// `mul * input + add` with constant coefficients.
    pub fn affine(&mut self, input: Var, mul: Real, add: Real) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| mul * v + add).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Affine { input, mul }, &[input])
    }

    /// `max(0, input - margin)` elementwise.
    pub fn hinge(&mut self, input: Var, margin: Real) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| (v - margin).max(0.0)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Hinge { input, margin }, &[input])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = crate::ops::matmul(self.value(a), self.value(b))?;
        let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
        let n = self.value(b).shape()[1];
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let t = crate::ops::transpose(self.value(input))?;
        let (rows, cols) = (t.shape()[1], t.shape()[0]);
        Ok(self.push(t, Op::Transpose { input, rows, cols }, &[input]))
    }

    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let t = crate::ops::softmax_rows(self.value(input))?;
        let cols = t.shape()[1];
        Ok(self.push(t, Op::SoftmaxRows { input, cols }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { input }, &[input]))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        self.reshape(input, &[n]).expect("flatten preserves length")
    }

    pub fn max_pool_over_channels(&mut self, input: Var) -> Result<Var> {
        let (t, argmax) = max_pool_over_channels(self.value(input))?;
        Ok(self.push(t, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn adaptive_max_pool_width(&mut self, input: Var, bins: usize) -> Result<Var> {
        let (t, argmax) = adaptive_max_pool_width(self.value(input), bins)?;
        Ok(self.push(t, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn layer_normalize(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        if self.value(weight).len() != n || self.value(bias).len() != n {
            return Err(Error::Dimension(format!(
                "layer_normalize affine lengths {}/{} do not match input length {n}",
                self.value(weight).len(),
                self.value(bias).len()
            )));
        }
        let (out, cache) = ln_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let t = Tensor::new(self.value(input).shape().to_vec(), out)?;
        Ok(self.push(t, Op::LayerNorm { input, weight, bias, cache }, &[input, weight, bias]))
    }

    /// Scalar cosine similarity of two equal-length tensors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, stabilizer: Real) -> Result<Var> {
        let s = crate::ops::cosine_similarity(self.value(a).data(), self.value(b).data(), stabilizer)?;
        Ok(self.push(Tensor::scalar(s), Op::Cosine { a, b, stabilizer }, &[a, b]))
    }

    /// Scalar `sum_i weights[i] * input[i]`.
    pub fn dot_const(&mut self, input: Var, weights: Vec<Real>) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(Error::Dimension(format!(
                "dot_const: {} weights for {} elements",
                weights.len(),
                x.len()
            )));
        }
        let s = x.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst { input, weights }, &[input]))
    }

    /// Backpropagates from a single-element output.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        self.backward_with(output, &[1.0])
    }

    /// Backpropagates `seed` as the gradient of `output`.
    pub fn backward_with(&mut self, output: Var, seed: &[Real]) -> Result<()> {
        if seed.len() != self.value(output).len() {
            return Err(Error::Dimension(format!(
                "backward seed has {} elements, output has {}",
                seed.len(),
                self.value(output).len()
            )));
        }
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.nodes[output.0].value.accumulate_grad(seed);
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].value.grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_op(idx, &op, &grad);
            self.nodes[idx].op = op;
            self.nodes[idx].value.grad = Some(grad);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn send(&mut self, v: Var, delta: &[Real]) {
        if self.wants(v) {
            self.nodes[v.0].value.accumulate_grad(delta);
        }
    }

    fn backward_op(&mut self, idx: usize, op: &Op, g: &[Real]) {
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geo } => {
                let (di, dw, db) = conv2d_backward(
                    geo,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.wants(*input),
                );
                if let Some(di) = di {
                    self.send(*input, &di);
                }
                self.send(*weight, &dw);
                if let Some(b) = bias {
                    self.send(*b, &db);
                }
            }
            Op::BatchNormTrain { input, scale, shift, cache } => {
                let c = self.value(*scale).len();
                let (di, ds, dt) = norm_backward(cache, g, self.value(*scale).data(), c, false);
                self.send(*input, &di);
                self.send(*scale, &ds);
                self.send(*shift, &dt);
            }
            Op::BatchNormEval { input, scale, shift, mean, inv_std } => {
                let c = mean.len();
                let x = self.value(*input).data();
                let sc = self.value(*scale).data();
                let plane = x.len() / c;
                let mut di = vec![0.0; x.len()];
                let mut ds = vec![0.0; c];
                let mut dt = vec![0.0; c];
                for ch in 0..c {
                    for i in 0..plane {
                        let k = ch * plane + i;
                        di[k] = g[k] * sc[ch] * inv_std[ch];
                        ds[ch] += g[k] * (x[k] - mean[ch]) * inv_std[ch];
                        dt[ch] += g[k];
                    }
                }
                self.send(*input, &di);
                self.send(*scale, &ds);
                self.send(*shift, &dt);
            }
            Op::LeakyRelu { input, slope } => {
                let d = leaky_relu_backward(self.value(*input).data(), g, *slope);
                self.send(*input, &d);
            }
            Op::Add { a, b } => {
                self.send(*a, g);
                self.send(*b, g);
            }
            Op::ScaleBy { input, factor } => {
                let f = self.value(*factor).data()[0];
                let df: Real = self.value(*input).data().iter().zip(g).map(|(x, d)| x * d).sum();
                let di: Vec<Real> = g.iter().map(|d| f * d).collect();
                self.send(*input, &di);
                self.send(*factor, &[df]);
            }
            Op::Affine { input, mul } => {
                let d: Vec<Real> = g.iter().map(|d| mul * d).collect();
                self.send(*input, &d);
            }
            Op::Hinge { input, margin } => {
                let d: Vec<Real> = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(x, d)| if x - margin > 0.0 { *d } else { 0.0 })
                    .collect();
                self.send(*input, &d);
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.wants(*a) {
                    let da = matmul_nt(g, self.value(*b).data(), *m, *n, *k);
                    self.send(*a, &da);
                }
                if self.wants(*b) {
                    let db = matmul_tn(self.value(*a).data(), g, *m, *k, *n);
                    self.send(*b, &db);
                }
            }
            Op::Transpose { input, rows, cols } => {
                // output is [cols, rows]
                let d = transpose_raw(g, *cols, *rows);
                self.send(*input, &d);
            }
            Op::SoftmaxRows { input, cols } => {
                let d = softmax_rows_backward(self.nodes[idx].value.data(), g, *cols);
                self.send(*input, &d);
            }
            Op::Reshape { input } => self.send(*input, g),
            Op::MaxPool { input, argmax } => {
                let d = scatter_max_backward(argmax, g, self.value(*input).len());
                self.send(*input, &d);
            }
            Op::LayerNorm { input, weight, bias, cache } => {
                let (di, dw, db) = norm_backward(cache, g, self.value(*weight).data(), 1, true);
                self.send(*input, &di);
                self.send(*weight, &dw);
                self.send(*bias, &db);
            }
            Op::Cosine { a, b, stabilizer } => {
                let (da, db) = cosine_backward(self.value(*a).data(), self.value(*b).data(), *stabilizer, g[0]);
                self.send(*a, &da);
                self.send(*b, &db);
            }
            Op::DotConst { input, weights } => {
                let d: Vec<Real> = weights.iter().map(|w| w * g[0]).collect();
                self.send(*input, &d);
            }
        }
    }
}
