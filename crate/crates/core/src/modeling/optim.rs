use std::f64::consts::PI;

use super::nn::Param;

/// One-cycle learning-rate schedule: cosine warm-up from `max/div` to
/// `max` over the first `pct_start` of steps, then cosine annealing down to
/// `max/(div·final_div)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps: total_steps.max(1),
            pct_start: 0.25,
            div: 25.0,
            final_div: 1e4,
        }
    }

    fn cos_interp(start: f64, end: f64, frac: f64) -> f64 {
        end + (start - end) / 2.0 * ((PI * frac).cos() + 1.0)
    }

    /// Learning rate for zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let frac = step as f64 / self.total_steps as f64;
        let start = self.max_lr / self.div;
        let end = start / self.final_div;
        if frac < self.pct_start {
            Self::cos_interp(start, self.max_lr, frac / self.pct_start)
        } else {
            Self::cos_interp(
                self.max_lr,
                end,
                ((frac - self.pct_start) / (1.0 - self.pct_start)).min(1.0),
            )
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-5,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update with gradients scaled by `grad_scale` (e.g.
    /// `1/batch_size` when gradients were summed over a batch).
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64, grad_scale: f32) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
                .collect();
        }
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (lr * bc2.sqrt() / bc1) as f32;
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let eps = (self.eps * bc2.sqrt()) as f32;
        for (p, (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            for i in 0..p.value.len() {
                let g = p.grad[i] * grad_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] = p.value[i] * decay - step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
