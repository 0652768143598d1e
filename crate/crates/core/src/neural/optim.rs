//! Adaptive-moment optimizer with cosine annealing and global-norm clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub base_lr: f64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: Option<f64>,
    pub skipped_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub skipped: bool,
    pub grad_norm: f64,
    pub applied_norm: f64,
    pub lr: f64,
}

/// Global L2 norm over all slices.
pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Factor that brings `norm` down to `ceiling`, or 1 when already below.
pub fn clip_scale(norm: f64, ceiling: f64) -> f64 {
    if norm > ceiling && norm > 0.0 {
        ceiling / norm
    } else {
        1.0
    }
}

impl OptimState {
    pub fn new(params: &[&mut [f64]], base_lr: f64, total_steps: u64, clip_norm: Option<f64>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            second_moment: zeros.clone(),
            first_moment: zeros,
            step_count: 0,
            base_lr,
            total_steps: total_steps.max(1),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm,
            skipped_steps: 0,
        }
    }

    /// Cosine-annealed rate at step `t`, reaching zero at `total_steps`.
    pub fn lr_at(&self, t: u64) -> f64 {
        let frac = (t.min(self.total_steps) as f64) / self.total_steps as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// One update; non-finite gradients skip the step.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> StepReport {
        assert_eq!(params.len(), grads.len(), "parameter and gradient groups differ");
        let norm = global_norm(grads);
        let lr = self.lr_at(self.step_count);
        if !norm.is_finite() {
            self.skipped_steps += 1;
            return StepReport {
                skipped: true,
                grad_norm: norm,
                applied_norm: 0.0,
                lr,
            };
        }
        let scale = self.clip_norm.map_or(1.0, |c| clip_scale(norm, c));
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
        StepReport {
            skipped: false,
            grad_norm: norm,
            applied_norm: norm * scale,
            lr,
        }
    }
}
