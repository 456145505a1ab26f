use crate::error::{Error, Result};
use crate::model::{GradientStore, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The rate drops by `decay_factor` every `decay_every` steps.
    pub decay_every: u64,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 10_000,
            decay_factor: 10.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.blocks().iter().map(|b| vec![0.0; b.values.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rate applied by the next step.
    pub fn effective_rate(&self) -> f64 {
        let drops = (self.step / self.config.decay_every) as i32;
        self.config.lr * self.config.decay_factor.powi(-drops)
    }

    /// One ascent step along `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradientStore) -> Result<()> {
        if grads.len() != self.m.len()
            || params.len() != self.m.len()
            || (0..self.m.len()).any(|i| grads.block(i).len() != self.m[i].len() || params.block(i).values.len() != self.m[i].len())
        {
            return Err(Error::Shape("gradients do not match the parameter store".into()));
        }
        let rate = self.effective_rate();
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..self.m.len() {
            let g = grads.block(i);
            let p = params.values_mut(i);
            for j in 0..g.len() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g[j];
                *v = c.beta2 * *v + (1.0 - c.beta2) * g[j] * g[j];
                p[j] += rate * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
