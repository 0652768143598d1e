//! Generalized advantage estimation and the clipped-surrogate update.

use super::TrainError;
use crate::neural::policy::gaussian_entropy;
use crate::neural::{OptimState, PolicyNet};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    /// Transitions collected before each update.
    pub batch: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Optimizer steps over which the learning rate anneals to zero.
    pub anneal_steps: u64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// The critic predicts returns divided by this.
    pub value_scale: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            discount: 0.99,
            batch: 1024,
            epochs: 4,
            minibatch: 256,
            learning_rate: 3e-4,
            anneal_steps: 8000,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            value_scale: 10.0,
            log_std_min: -3.0,
            log_std_max: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err("clip must lie in (0, 1)".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err("discount must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err("gae_lambda must lie in [0, 1]".into());
        }
        if self.batch < 64 || self.minibatch == 0 || self.epochs == 0 {
            return Err("batch must be at least 64 with non-empty minibatches and epochs".into());
        }
        if !(self.learning_rate > 0.0 && self.value_scale > 0.0 && self.max_grad_norm > 0.0) {
            return Err("learning_rate, value_scale and max_grad_norm must be positive".into());
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err("log_std range is empty".into());
        }
        Ok(())
    }
}

/// Advantages and returns for one trajectory. `bootstrap` is the value
/// after the last transition, used only if that transition is not terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    discount: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n = rewards.len();
    if n == 0 {
        return Err(TrainError::EmptyTrajectory);
    }
    assert!(values.len() == n && dones.len() == n, "trajectory columns differ in length");
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + discount * next_value * live - values[t];
        running = delta + discount * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to zero mean and scales to unit standard deviation.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// One stored transition in update-ready form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    /// Pre-squash action taken.
    pub action: f64,
    pub log_prob: f64,
    pub advantage: f64,
    /// Return in reward units.
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub optimizer_steps: u64,
    pub skipped_steps: u64,
}

fn log_prob(u: f64, mu: f64, log_std: f64) -> f64 {
    crate::neural::policy::gaussian_log_prob(u, mu, log_std)
}

/// Clipped-surrogate objective, value regression and entropy bonus over
/// `epochs` passes of shuffled minibatches.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNet,
    opt: &mut OptimState,
    samples: &[Sample],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoDiagnostics, TrainError> {
    if samples.len() < 64 {
        return Err(TrainError::BatchTooSmall(samples.len()));
    }
    let width = net.input_width();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut diag = PpoDiagnostics::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let m = chunk.len() as f64;
            let mut x = Array2::zeros((chunk.len(), width));
            for (row, &i) in chunk.iter().enumerate() {
                for (c, v) in samples[i].input.iter().enumerate() {
                    x[[row, c]] = *v;
                }
            }
            let out = net.forward_batch(x.view())?;
            let log_std = net.log_std();
            let var = (2.0 * log_std).exp();
            let mut d_mu = Array1::zeros(chunk.len());
            let mut d_value = Array1::zeros(chunk.len());
            let mut d_log_std = -cfg.entropy_coef;
            let (mut actor, mut value_loss, mut clipped, mut kl) = (0.0, 0.0, 0.0, 0.0);
            for (row, &i) in chunk.iter().enumerate() {
                let s = &samples[i];
                let mu = out.mu[row];
                let lp = log_prob(s.action, mu, log_std);
                let ratio = (lp - s.log_prob).exp();
                let a = s.advantage;
                let unclipped = ratio * a;
                let bounded = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
                actor -= unclipped.min(bounded) / m;
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1.0 / m;
                }
                kl += (s.log_prob - lp) / m;
                if unclipped <= bounded {
                    let d_lp = -ratio * a / m;
                    d_mu[row] = d_lp * (s.action - mu) / var;
                    let z2 = (s.action - mu).powi(2) / var;
                    d_log_std += d_lp * (z2 - 1.0);
                }
                let err = out.value[row] - s.ret / cfg.value_scale;
                value_loss += 0.5 * err * err / m;
                d_value[row] = cfg.value_coef * err / m;
            }
            let entropy = gaussian_entropy(log_std);
            let loss = actor + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss);
            }
            let mut grads = net.backward_raw(&out.cache, d_mu.view(), d_value.view())?;
            grads.log_std[0] = d_log_std;
            let report = net.apply_gradients(&grads, opt);
            net.log_std[0] = net.log_std[0].clamp(cfg.log_std_min, cfg.log_std_max);
            diag.actor_loss += actor;
            diag.value_loss += value_loss;
            diag.entropy += entropy;
            diag.clip_fraction += clipped;
            diag.approx_kl += kl;
            diag.grad_norm += report.grad_norm;
            if report.skipped {
                diag.skipped_steps += 1;
            } else {
                diag.optimizer_steps += 1;
            }
            batches += 1;
        }
    }
    let b = batches as f64;
    diag.actor_loss /= b;
    diag.value_loss /= b;
    diag.entropy /= b;
    diag.clip_fraction /= b;
    diag.approx_kl /= b;
    diag.grad_norm /= b;
    Ok(diag)
}
