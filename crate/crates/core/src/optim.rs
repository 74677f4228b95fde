//! Adam with decoupled weight decay, operating on lists of dense tensors.

use serde::{Deserialize, Serialize};

use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWSettings {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub settings: AdamWSettings,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(settings: AdamWSettings, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect::<Vec<_>>();
        Self {
            settings,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update. `params` and `grads` must follow the order of the shapes
    /// the optimizer was built with.
    pub fn update(&mut self, params: Vec<&mut Matrix>, grads: Vec<&Matrix>) {
        debug_assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let s = self.settings;
        let t = self.step as i32;
        let bias1 = 1.0 - s.beta1.powi(t);
        let bias2 = 1.0 - s.beta2.powi(t);
        let decay = 1.0 - s.learning_rate * s.weight_decay;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for ((pi, &gi), (mi, vi)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *pi *= decay;
                *mi = s.beta1 * *mi + (1.0 - s.beta1) * gi;
                *vi = s.beta2 * *vi + (1.0 - s.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= s.learning_rate * m_hat / (v_hat.sqrt() + s.eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: Vec<&mut Matrix>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for g in grads {
            *g *= factor;
        }
    }
    norm
}
