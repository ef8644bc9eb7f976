//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Central-difference step.
pub const FD_STEP: Real = 1e-5;

/// Something with a value and a vector-Jacobian product.
pub trait Differentiable {
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;

    /// Gradient of `sum(seed * forward(inputs))` w.r.t. each input.
    fn vjp(&self, inputs: &[Tensor], seed: &[Real]) -> Result<Vec<Vec<Real>>>;
}

/// Adapts a closure that records ops on a [`Graph`].
pub struct GraphOp<F>(pub F);

impl<F> GraphOp<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    fn build(&self, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| g.input(t.clone().with_requires_grad(true)))
            .collect();
        let out = (self.0)(&mut g, &vars)?;
        Ok((g, vars, out))
    }
}

impl<F> Differentiable for GraphOp<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (g, _, out) = self.build(inputs)?;
        Ok(g.value(out).clone())
    }

    fn vjp(&self, inputs: &[Tensor], seed: &[Real]) -> Result<Vec<Vec<Real>>> {
        let (mut g, vars, out) = self.build(inputs)?;
        g.backward_with(out, seed)?;
        Ok(vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.grad(*v).map(<[Real]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct GradientReport {
    /// Per input: `max|analytic - numeric| / max(max|analytic|, max|numeric|)`.
    pub max_rel_error: Vec<Real>,
    pub tolerance: Real,
    pub passed: bool,
    pub diagnostics: Vec<String>,
}

impl GradientReport {
    pub fn worst(&self) -> Real {
        self.max_rel_error.iter().copied().fold(0.0, Real::max)
    }
}

fn reduction_weights(len: usize) -> Vec<Real> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Compares the analytic gradient of `op` against central finite differences.
///
/// Non-scalar outputs are reduced with fixed pseudo-random weights first.
pub fn check_gradient(op: &impl Differentiable, inputs: &[Tensor], tolerance: Real) -> GradientReport {
    let mut report = GradientReport {
        max_rel_error: vec![Real::INFINITY; inputs.len()],
        tolerance,
        passed: false,
        diagnostics: Vec::new(),
    };
    let out = match op.forward(inputs) {
        Ok(t) => t,
        Err(e) => {
            report.diagnostics.push(format!("forward failed: {e}"));
            return report;
        }
    };
    if !out.is_finite() {
        report.diagnostics.push("forward produced non-finite values".into());
        return report;
    }
    let weights = reduction_weights(out.len());
    let analytic = match op.vjp(inputs, &weights) {
        Ok(g) => g,
        Err(e) => {
            report.diagnostics.push(format!("backward failed: {e}"));
            return report;
        }
    };
    let objective = |xs: &[Tensor]| -> Result<Real> {
        let y = op.forward(xs)?;
        Ok(y.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut ok = true;
    for (i, grad) in analytic.iter().enumerate() {
        if grad.iter().any(|v| !v.is_finite()) {
            report.diagnostics.push(format!("input {i}: analytic gradient is non-finite"));
            ok = false;
            continue;
        }
        let mut numeric = vec![0.0; inputs[i].len()];
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + FD_STEP;
            let plus = objective(&work);
            work[i].data_mut()[k] = orig - FD_STEP;
            let minus = objective(&work);
            work[i].data_mut()[k] = orig;
            match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => {
                    numeric[k] = (p - m) / (2.0 * FD_STEP);
                }
                _ => {
                    report
                        .diagnostics
                        .push(format!("input {i}[{k}]: perturbed evaluation failed or non-finite"));
                    ok = false;
                }
            }
        }
        let scale = grad
            .iter()
            .chain(&numeric)
            .fold(0.0 as Real, |m, v| m.max(v.abs()));
        let diff = grad
            .iter()
            .zip(&numeric)
            .fold(0.0 as Real, |m, (a, n)| m.max((a - n).abs()));
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        report.max_rel_error[i] = rel;
        if rel >= tolerance {
            report
                .diagnostics
                .push(format!("input {i}: relative error {rel:.3e} exceeds {tolerance:.1e}"));
            ok = false;
        }
    }
    report.passed = ok;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_op_is_exact() {
        let op = GraphOp(|g: &mut Graph, x: &[Var]| Ok(g.affine(x[0], 3.0, -1.0)));
        let r = check_gradient(&op, &[Tensor::from_vec(vec![0.3, -1.2, 4.0])], 1e-9);
        assert!(r.passed, "{r:?}");
        assert!(r.worst() < 1e-9);
    }

    struct WrongSquare;

    impl Differentiable for WrongSquare {
        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            let d = inputs[0].data().iter().map(|v| v * v).collect();
            Tensor::new(inputs[0].shape().to_vec(), d)
        }

        fn vjp(&self, inputs: &[Tensor], seed: &[Real]) -> Result<Vec<Vec<Real>>> {
            // deliberately missing the factor 2
            Ok(vec![inputs[0].data().iter().zip(seed).map(|(x, s)| x * s).collect()])
        }
    }

    #[test]
    fn wrong_backward_is_flagged() {
        let r = check_gradient(&WrongSquare, &[Tensor::from_vec(vec![1.0, 2.0])], 1e-4);
        assert!(!r.passed);
        assert!(r.worst() > 1e-4);
        assert!(!r.diagnostics.is_empty());
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let op = GraphOp(|g: &mut Graph, x: &[Var]| Ok(g.affine(x[0], Real::INFINITY, 0.0)));
        let r = check_gradient(&op, &[Tensor::from_vec(vec![1.0])], 1e-4);
        assert!(!r.passed);
        assert!(r.diagnostics[0].contains("non-finite"));
    }
}
