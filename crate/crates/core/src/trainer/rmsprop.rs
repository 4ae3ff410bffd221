use crate::error::{Error, Result};

/// One RMSProp update, elementwise:
///
/// ```text
/// s <- decay * s + (1 - decay) * g^2
/// w <- w - lr * g / (sqrt(s) + eps)
/// ```
pub fn rmsprop_step(
    weights: &mut [f64],
    grad: &[f64],
    state: &mut [f64],
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    if grad.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: weights.len(),
            actual: grad.len(),
        });
    }
    if state.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: weights.len(),
            actual: state.len(),
        });
    }
    if !(lr >= 0.0) {
        return Err(Error::Precondition(format!("learning rate must be non-negative, got {lr}")));
    }
    for ((w, &g), s) in weights.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = decay * *s + (1.0 - decay) * g * g;
        if g != 0.0 {
            *w -= lr * g / (s.sqrt() + eps);
        }
    }
    Ok(())
}

/// RMSProp optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    square_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, decay: f64, eps: f64) -> Self {
        Self {
            decay,
            eps,
            square_avg: vec![0.0; len],
        }
    }

    pub fn square_avg(&self) -> &[f64] {
        &self.square_avg
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        rmsprop_step(weights, grad, &mut self.square_avg, lr, self.decay, self.eps)
    }
}
