//! Per-step arbitration reward with separately logged components.

use serde::{Deserialize, Serialize};

pub const LOG_P_FLOOR: f64 = -13.815_510_557_964_274; // ln 1e-6

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_coll: f64,
    pub w_prox: f64,
    pub w_far: f64,
    pub w_prog: f64,
    pub w_auto: f64,
    pub w_goal: f64,
    /// MAP-goal distance below which the proximity bonus applies.
    pub near_threshold: f64,
    /// MAP-goal distance above which assistance is penalized.
    pub far_threshold: f64,
    /// Length that counts as one unit of progress.
    pub progress_unit: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_coll: 10.0,
            w_prox: 2.5,
            w_far: 1.5,
            w_prog: 3.0,
            w_auto: 1.5,
            w_goal: 2.0,
            near_threshold: 100.0,
            far_threshold: 250.0,
            progress_unit: 3.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.w_coll, self.w_prox, self.w_far, self.w_prog, self.w_auto, self.w_goal];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err("reward weights must be non-negative".into());
        }
        if !(self.progress_unit > 0.0) {
            return Err("progress_unit must be positive".into());
        }
        if !(self.near_threshold < self.far_threshold) {
            return Err("near_threshold must be below far_threshold".into());
        }
        Ok(())
    }

    /// Names accepted by [`RewardWeights::without`].
    pub const TERMS: [&'static str; 6] = ["coll", "prox", "far", "prog", "auto", "goal"];

    /// Copy with one weight zeroed, for the reward ablation.
    pub fn without(&self, term: &str) -> Option<Self> {
        let mut w = *self;
        match term {
            "coll" => w.w_coll = 0.0,
            "prox" => w.w_prox = 0.0,
            "far" => w.w_far = 0.0,
            "prog" => w.w_prog = 0.0,
            "auto" => w.w_auto = 0.0,
            "goal" => w.w_goal = 0.0,
            _ => return None,
        }
        Some(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    pub collision: bool,
    pub gamma: f64,
    pub p_max: f64,
    pub map_goal_distance: f64,
    /// Reduction in distance to the true goal, in units of `progress_unit`.
    pub progress: f64,
    pub p_true: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub collision: f64,
    pub proximity: f64,
    pub far: f64,
    pub progress: f64,
    pub autonomy: f64,
    pub goal: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.collision + self.proximity + self.far + self.progress + self.autonomy + self.goal
    }

    pub fn add(&mut self, o: &RewardTerms) {
        self.collision += o.collision;
        self.proximity += o.proximity;
        self.far += o.far;
        self.progress += o.progress;
        self.autonomy += o.autonomy;
        self.goal += o.goal;
    }
}

pub fn step_reward(c: &RewardContext, w: &RewardWeights) -> RewardTerms {
    let near = c.map_goal_distance < w.near_threshold;
    let far = c.map_goal_distance > w.far_threshold;
    RewardTerms {
        collision: if c.collision { -w.w_coll } else { 0.0 },
        proximity: if near { w.w_prox * c.gamma * c.p_max } else { 0.0 },
        far: if far { -w.w_far * c.gamma } else { 0.0 },
        progress: w.w_prog * c.p_max * c.progress,
        autonomy: -w.w_auto * c.gamma * c.gamma,
        goal: w.w_goal * c.p_true.ln().max(LOG_P_FLOOR),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ctx() -> RewardContext {
        RewardContext {
            collision: false,
            gamma: 0.0,
            p_max: 1.0,
            map_goal_distance: 180.0,
            progress: 0.0,
            p_true: 1.0,
        }
    }

    #[test]
    fn uniform_belief_only_identification_term() {
        let c = RewardContext {
            p_max: 1.0 / 3.0,
            p_true: 1.0 / 3.0,
            ..ctx()
        };
        let r = step_reward(&c, &RewardWeights::default());
        assert_abs_diff_eq!(r.total(), 2.0 * (1.0f64 / 3.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.total(), -2.197, epsilon = 1e-3);
    }

    #[test]
    fn full_assist_far_from_goals() {
        let c = RewardContext {
            gamma: 1.0,
            map_goal_distance: 400.0,
            ..ctx()
        };
        assert_abs_diff_eq!(step_reward(&c, &RewardWeights::default()).total(), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn collision_alone() {
        let c = RewardContext { collision: true, ..ctx() };
        assert_eq!(step_reward(&c, &RewardWeights::default()).total(), -10.0);
    }

    #[test]
    fn goal_term_is_floored() {
        let c = RewardContext { p_true: 0.0, ..ctx() };
        assert_abs_diff_eq!(step_reward(&c, &RewardWeights::default()).goal, 2.0 * LOG_P_FLOOR);
    }

    #[test]
    fn total_is_sum_of_terms() {
        let c = RewardContext {
            collision: true,
            gamma: 0.6,
            p_max: 0.7,
            map_goal_distance: 50.0,
            progress: 0.8,
            p_true: 0.2,
        };
        let r = step_reward(&c, &RewardWeights::default());
        let sum = -10.0 + 2.5 * 0.6 * 0.7 + 3.0 * 0.7 * 0.8 - 1.5 * 0.36 + 2.0 * 0.2f64.ln();
        assert_abs_diff_eq!(r.total(), sum, epsilon = 1e-12);
        assert_eq!(r.far, 0.0);
    }

    #[test]
    fn ablation_zeroes_one_weight() {
        let w = RewardWeights::default().without("prog").unwrap();
        assert_eq!(w.w_prog, 0.0);
        assert_eq!(w.w_coll, 10.0);
        assert!(RewardWeights::default().without("nope").is_none());
    }
}
