//! Adaptive-moment optimizer.

use fgs_autograd::{Float, Gradients, Tensor};

use crate::model::DeepFgs;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Float>(model: &DeepFgs<T>, cfg: AdamConfig) -> Self {
        let sizes: Vec<usize> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.numel())
            .collect();
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the global gradient norm before clipping.
    pub fn step<T: Float>(&mut self, model: &mut DeepFgs<T>, grads: &Gradients<T>, lr: f64) -> f64 {
        let mut params = model.named_params_mut();
        let g: Vec<Vec<T>> = params.iter().map(|(_, t)| grads.get_or_zeros(t)).collect();
        let norm = g
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        for (k, (_, slot)) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = slot.to_vec();
            for i in 0..data.len() {
                let gi = g[k][i].as_f64() * clip;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let update =
                    lr * (m[i] / correction1) / ((v[i] / correction2).sqrt() + self.cfg.eps);
                data[i] = T::from_f64(data[i].as_f64() - update);
            }
            **slot = Tensor::param(data, slot.shape());
        }
        norm
    }
}
