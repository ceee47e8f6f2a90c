use super::{Parameters, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily on the first step
/// and keep the layout of the parameter tensors they track.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.first_moment, &self.second_moment)
    }

    pub(crate) fn restore(&mut self, step_count: u64, first: Vec<Vec<S>>, second: Vec<Vec<S>>) {
        self.step_count = step_count;
        self.first_moment = first;
        self.second_moment = second;
    }

    pub fn step<P: Parameters<S>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_tensors = grads.tensors();
        if let Some(bad) = grad_tensors.iter().flat_map(|t| t.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Training {
                step: self.step_count + 1,
                message: format!("non-finite gradient component {bad}"),
            });
        }
        let mut tensors = params.tensors_mut();
        if self.first_moment.is_empty() {
            self.first_moment = tensors.iter().map(|t| vec![S::zero(); t.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if tensors.len() != self.first_moment.len() {
            return Err(Error::Dimension {
                context: "Adam tensor count",
                expected: self.first_moment.len(),
                actual: tensors.len(),
            });
        }
        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let b1 = S::of(c.beta1);
        let b2 = S::of(c.beta2);
        let one = S::one();
        let bias1 = one - S::of(c.beta1.powi(t));
        let bias2 = one - S::of(c.beta2.powi(t));
        let lr = S::of(c.learning_rate);
        let eps = S::of(c.epsilon);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(&grad_tensors)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
