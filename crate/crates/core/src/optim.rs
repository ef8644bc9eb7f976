use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A named trainable tensor with its Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Vec<Real>,
    pub adam_v: Vec<Real>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let n = tensor.len();
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: Real) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update of every parameter in `params`.
    ///
    /// Every parameter must carry a gradient; none are touched otherwise.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
            return Err(Error::Contract(format!(
                "adam step on parameter '{}' without a gradient",
                p.name
            )));
        }
        for p in params {
            self.update(p);
        }
        Ok(())
    }

    fn update(&self, p: &mut Parameter) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let grad = p.tensor.grad.as_deref().expect("checked by step");
        let mut deltas = Vec::with_capacity(grad.len());
        for ((m, v), &g) in p.adam_m.iter_mut().zip(p.adam_v.iter_mut()).zip(grad) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            deltas.push(self.lr * m_hat / (v_hat.sqrt() + self.eps));
        }
        for (w, d) in p.tensor.data_mut().iter_mut().zip(deltas) {
            *w -= d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: Real, grad: Real) -> Parameter {
        let mut p = Parameter::new("x", Tensor::scalar(value));
        p.tensor.grad = Some(vec![grad]);
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = param(1.25, 0.0);
        Adam::default().step([&mut p]).unwrap();
        assert_eq!(p.tensor.data(), &[1.25]);
        assert_eq!(p.adam_m, vec![0.0]);
        assert_eq!(p.adam_v, vec![0.0]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = param(0.0, g);
            Adam::with_lr(0.01).step([&mut p]).unwrap();
            let moved = p.tensor.data()[0];
            assert!((moved + 0.01 * g.signum()).abs() < 1e-6, "g={g} moved={moved}");
        }
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut a = param(1.0, 1.0);
        let mut b = Parameter::new("b", Tensor::scalar(2.0));
        let err = Adam::default().step([&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(a.tensor.data(), &[1.0]);
        assert_eq!(a.step_count, 0);
    }

    #[test]
    fn converges_on_a_parabola() {
        // f(x) = x^2, grad 2x
        let adam = Adam::with_lr(0.1);
        let mut p = param(1.0, 0.0);
        for _ in 0..100 {
            let x = p.tensor.data()[0];
            p.tensor.grad = Some(vec![2.0 * x]);
            adam.step([&mut p]).unwrap();
        }
        assert!(p.tensor.data()[0].abs() < 0.05, "x = {}", p.tensor.data()[0]);
    }
}
