use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param { value, grad: None }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// SGD with classical momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        params: &[&Param],
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        let velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(Sgd {
            learning_rate,
            momentum,
            weight_decay,
            velocity,
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Tensor] {
        &mut self.velocity
    }

    /// `v ← μ·v + grad + λ·param; param ← param − lr·v`, then clears the grads.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, step got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (k, p) in params.iter().enumerate() {
            let Some(g) = &p.grad else {
                return Err(Error::Contract(format!("parameter {k} has no gradient")));
            };
            if g.shape() != self.velocity[k].shape() || p.value.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "sgd_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: self.velocity[k].shape().to_vec(),
                });
            }
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let g = p.grad.take().expect("checked above");
            let (v, w) = (v.data_mut(), p.value.data_mut());
            for ((vi, wi), gi) in v.iter_mut().zip(w.iter_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}
