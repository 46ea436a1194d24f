use ndarray::{Array2, Zip};

use super::param::ParamStore;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer. Moment estimates are kept per parameter
/// position, so one `Adam` must always be stepped with the same store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update to every parameter that requires a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.first.is_empty() {
            for (_, p) in params.iter() {
                self.first.push(Array2::zeros(p.shape()));
                self.second.push(Array2::zeros(p.shape()));
            }
        }
        if self.first.len() != params.len() {
            return Err(Error::contract("optimizer stepped with a different parameter set"));
        }
        for (name, p) in params.iter() {
            if p.requires_grad && p.grad.is_none() {
                return Err(Error::contract(format!("parameter {name} has no gradient")));
            }
        }

        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step);
        let bias2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.as_ref().expect("checked above");
            Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
