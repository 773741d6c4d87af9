use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("parameter `{param}` has shape {param_shape:?} but its gradient has shape {grad_shape:?}")]
    ShapeMismatch {
        param: String,
        param_shape: Vec<usize>,
        grad_shape: Vec<usize>,
    },
    #[error("expected {expected} parameters, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
}

/// Adam moments and hyperparameters for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a failed step leaves everything unchanged.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[&Tensor]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(OptimError::CountMismatch {
                expected: self.first.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch {
                    param: name.to_string(),
                    param_shape: p.shape().to_vec(),
                    grad_shape: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
