//! Policy-gradient adaptation of the goal-inference parameters.
//!
//! The filter is treated as a stochastic policy over which goal the expert
//! is conditioned on. Its parameters `(beta, w_theta, w_d, temperature)`
//! are moved along a mix of the advantage-weighted log-likelihood of the
//! goal actually used and a supervised log-likelihood of the true goal.
//! Gradients are central finite differences through a replay of the filter.

use crate::belief::{update_with_goals, BeliefState, InferenceParams};
use crate::env::Goal;
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

/// Step sizes of the finite-difference probes are relative to these.
pub const PHI_SCALES: [f64; 4] = [10.0, 1.0, 1.0, 1.0];
const FD_STEP: f64 = 1e-4;
const PROB_FLOOR: f64 = 1e-6;
pub const BETA_RANGE: (f64, f64) = (0.5, 50.0);
pub const WEIGHT_RANGE: (f64, f64) = (0.05, 0.95);

/// What the filter saw during one episode plus per-step advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefEpisode {
    pub goals: Vec<Goal>,
    pub cursors: Vec<Vec2>,
    pub inputs: Vec<Vec2>,
    /// Goal index the expert was conditioned on at each step.
    pub committed: Vec<usize>,
    pub true_goal: usize,
    pub advantages: Vec<f64>,
}

impl BeliefEpisode {
    /// Posterior after every step under `params`.
    pub fn replay(&self, params: &InferenceParams) -> Vec<BeliefState> {
        let mut b = BeliefState::uniform(self.goals.len());
        self.cursors
            .iter()
            .zip(&self.inputs)
            .map(|(&c, &h)| {
                b = update_with_goals(&b, &self.goals, c, h, params).expect("goal count is fixed within an episode");
                b.clone()
            })
            .collect()
    }

    /// `(L_rl, L_sup)` under `params`.
    pub fn losses(&self, params: &InferenceParams) -> (f64, f64) {
        let beliefs = self.replay(params);
        let n = beliefs.len().max(1) as f64;
        let mut rl = 0.0;
        let mut sup = 0.0;
        for (t, b) in beliefs.iter().enumerate() {
            rl -= self.advantages[t] * b.probs[self.committed[t]].max(PROB_FLOOR).ln();
            sup -= b.probs[self.true_goal].max(PROB_FLOOR).ln();
        }
        (rl / n, sup / n)
    }

    pub fn mean_p_max(&self, params: &InferenceParams) -> f64 {
        let beliefs = self.replay(params);
        beliefs.iter().map(|b| b.p_max).sum::<f64>() / beliefs.len().max(1) as f64
    }
}

pub fn phi(params: &InferenceParams) -> [f64; 4] {
    [params.beta, params.w_theta, params.w_d, params.temperature]
}

pub fn with_phi(base: &InferenceParams, phi: [f64; 4]) -> InferenceParams {
    InferenceParams {
        beta: phi[0],
        w_theta: phi[1],
        w_d: phi[2],
        temperature: phi[3],
        ..*base
    }
}

/// Gradients of both losses in scale-normalized coordinates
/// (`d L / d (phi_i / PHI_SCALES[i])`).
pub fn loss_gradients(ep: &BeliefEpisode, params: &InferenceParams) -> ([f64; 4], [f64; 4]) {
    let base = phi(params);
    let mut rl = [0.0; 4];
    let mut sup = [0.0; 4];
    for i in 0..4 {
        let h = FD_STEP * PHI_SCALES[i];
        let mut up = base;
        let mut down = base;
        up[i] += h;
        down[i] -= h;
        let (rl_up, sup_up) = ep.losses(&with_phi(params, up));
        let (rl_down, sup_down) = ep.losses(&with_phi(params, down));
        rl[i] = (rl_up - rl_down) / (2.0 * FD_STEP);
        sup[i] = (sup_up - sup_down) / (2.0 * FD_STEP);
    }
    (rl, sup)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefRlConfig {
    pub learning_rate: f64,
    /// Mean `p_max` at which the confidence scaling reaches one.
    pub c_confidence: f64,
    pub c_clip: f64,
}

impl Default for BeliefRlConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            c_confidence: 0.8,
            c_clip: 1.0,
        }
    }
}

/// Mixes the two gradients, scales by confidence, then clips the norm.
/// Returns the direction and the pre-clip norm.
pub fn belief_update_direction(
    rl: [f64; 4],
    sup: [f64; 4],
    alpha: f64,
    mean_p_max: f64,
    cfg: &BeliefRlConfig,
) -> ([f64; 4], f64) {
    let scale = (mean_p_max / cfg.c_confidence).min(1.0);
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = scale * (alpha * rl[i] + (1.0 - alpha) * sup[i]);
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > cfg.c_clip {
        g.iter_mut().for_each(|v| *v *= cfg.c_clip / norm);
    }
    (g, norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeliefUpdateReport {
    pub loss_rl: f64,
    pub loss_sup: f64,
    pub grad_norm: f64,
    /// Parameters that hit a bound this update.
    pub clamped: usize,
}

/// One SGD step over a batch of episodes. `tau_range` bounds the temperature.
pub fn belief_reinforce_update(
    episodes: &[BeliefEpisode],
    params: &InferenceParams,
    alpha: f64,
    tau_range: (f64, f64),
    cfg: &BeliefRlConfig,
) -> (InferenceParams, BeliefUpdateReport) {
    let mut report = BeliefUpdateReport::default();
    if episodes.is_empty() {
        return (*params, report);
    }
    let n = episodes.len() as f64;
    let mut rl = [0.0; 4];
    let mut sup = [0.0; 4];
    let mut p_max = 0.0;
    for ep in episodes {
        let (r, s) = loss_gradients(ep, params);
        let (lr, ls) = ep.losses(params);
        for i in 0..4 {
            rl[i] += r[i] / n;
            sup[i] += s[i] / n;
        }
        report.loss_rl += lr / n;
        report.loss_sup += ls / n;
        p_max += ep.mean_p_max(params) / n;
    }
    let (g, norm) = belief_update_direction(rl, sup, alpha, p_max, cfg);
    report.grad_norm = norm;

    let mut next = phi(params);
    for i in 0..4 {
        next[i] -= cfg.learning_rate * g[i] * PHI_SCALES[i];
    }
    let mut clamp = |v: f64, lo: f64, hi: f64| {
        if v < lo || v > hi {
            report.clamped += 1;
        }
        v.clamp(lo, hi)
    };
    next[0] = clamp(next[0], BETA_RANGE.0, BETA_RANGE.1);
    next[1] = clamp(next[1], WEIGHT_RANGE.0, WEIGHT_RANGE.1);
    next[2] = clamp(next[2], WEIGHT_RANGE.0, WEIGHT_RANGE.1);
    next[3] = clamp(next[3], tau_range.0, tau_range.1);
    let out = with_phi(params, next).renormalized();
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn episode(advantage: f64) -> BeliefEpisode {
        let goals = vec![
            Goal { id: 0, position: Vec2::new(600.0, 150.0), radius: 20.0 },
            Goal { id: 1, position: Vec2::new(600.0, 450.0), radius: 20.0 },
        ];
        let mut cursors = Vec::new();
        let mut inputs = Vec::new();
        let mut c = Vec2::new(100.0, 300.0);
        for _ in 0..20 {
            let h = (goals[0].position - c).normalized().unwrap() * 8.0 + Vec2::new(0.0, 2.0);
            cursors.push(c);
            inputs.push(h);
            c = c + h;
        }
        BeliefEpisode {
            goals,
            cursors,
            inputs,
            committed: vec![0; 20],
            true_goal: 0,
            advantages: vec![advantage; 20],
        }
    }

    #[test]
    fn direction_is_pure_supervised_at_alpha_zero() {
        let cfg = BeliefRlConfig { c_clip: 100.0, ..Default::default() };
        let (g, _) = belief_update_direction([1.0, 2.0, 3.0, 4.0], [0.1, 0.2, 0.3, 0.4], 0.0, 0.9, &cfg);
        assert_eq!(g, [0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn zero_advantage_leaves_only_supervised_part() {
        let ep = episode(0.0);
        let (rl, sup) = loss_gradients(&ep, &InferenceParams::default());
        assert!(rl.iter().all(|v| *v == 0.0));
        assert!(sup.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn low_confidence_halves_the_step() {
        let cfg = BeliefRlConfig { c_clip: 100.0, ..Default::default() };
        let (full, _) = belief_update_direction([0.3; 4], [0.1; 4], 0.5, 0.8, &cfg);
        let (half, _) = belief_update_direction([0.3; 4], [0.1; 4], 0.5, 0.4, &cfg);
        for i in 0..4 {
            assert_abs_diff_eq!(half[i], 0.5 * full[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let cfg = BeliefRlConfig::default();
        let (g, pre) = belief_update_direction([10.0; 4], [10.0; 4], 0.5, 1.0, &cfg);
        assert!(pre > 1.0);
        assert_abs_diff_eq!(g.iter().map(|v| v * v).sum::<f64>().sqrt(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn finite_differences_match_a_direct_probe() {
        let ep = episode(1.0);
        let p = InferenceParams::default();
        let (_, sup) = loss_gradients(&ep, &p);
        let h = 1e-3;
        let up = ep.losses(&InferenceParams { beta: p.beta + h * 10.0, ..p }).1;
        let down = ep.losses(&InferenceParams { beta: p.beta - h * 10.0, ..p }).1;
        assert_abs_diff_eq!(sup[0], (up - down) / (2.0 * h), epsilon = 1e-4);
    }

    #[test]
    fn supervised_step_lowers_supervised_loss() {
        let ep = episode(0.0);
        let p = InferenceParams::default();
        let before = ep.losses(&p).1;
        let (next, rep) = belief_reinforce_update(&[ep.clone()], &p, 0.0, (0.5, 2.0), &BeliefRlConfig::default());
        assert_eq!(rep.clamped, 0);
        assert!(ep.losses(&next).1 < before);
        assert_abs_diff_eq!(next.w_theta + next.w_d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn temperature_respects_its_bounds() {
        let ep = episode(-5.0);
        let p = InferenceParams { temperature: 0.5, ..Default::default() };
        let cfg = BeliefRlConfig { learning_rate: 10.0, ..Default::default() };
        let (next, _) = belief_reinforce_update(&[ep], &p, 1.0, (0.5, 0.5), &cfg);
        assert_eq!(next.temperature, 0.5);
    }
}
