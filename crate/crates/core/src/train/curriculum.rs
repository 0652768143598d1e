//! Stage progression by recent success rate.

use serde::{Deserialize, Serialize};

/// A stage that has run this many times its minimum without advancing stalls.
pub const STALL_FACTOR: usize = 5;
/// Episodes in the success-rate window.
pub const WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub stage_id: u8,
    pub min_episodes: usize,
    /// Required windowed success rate; `None` means "until plateau".
    pub success_threshold: Option<f64>,
    pub max_collision_rate: Option<f64>,
    /// Smallest window-over-window gain that still counts as improving.
    #[serde(default)]
    pub plateau_gain: f64,
}

pub fn default_curriculum() -> Vec<CurriculumStage> {
    let stage = |stage_id, min_episodes, threshold, collisions| CurriculumStage {
        stage_id,
        min_episodes,
        success_threshold: threshold,
        max_collision_rate: collisions,
        plateau_gain: 0.01,
    };
    vec![
        stage(1, 100, Some(0.80), None),
        stage(2, 200, Some(0.75), Some(0.15)),
        stage(3, 300, Some(0.70), None),
        stage(4, 400, Some(0.65), None),
        stage(5, 200, None, None),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Stay,
    Advance,
    Finished,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct CurriculumTracker {
    stages: Vec<CurriculumStage>,
    index: usize,
    /// `(success, collided)` for the current stage.
    history: Vec<(bool, bool)>,
}

fn rate(window: &[(bool, bool)], pick: impl Fn(&(bool, bool)) -> bool) -> f64 {
    window.iter().filter(|e| pick(e)).count() as f64 / window.len().max(1) as f64
}

impl CurriculumTracker {
    pub fn new(stages: Vec<CurriculumStage>) -> Self {
        assert!(!stages.is_empty(), "curriculum needs at least one stage");
        Self {
            stages,
            index: 0,
            history: Vec::new(),
        }
    }

    pub fn stage(&self) -> &CurriculumStage {
        &self.stages[self.index]
    }

    pub fn stage_index(&self) -> usize {
        self.index
    }

    pub fn episodes_in_stage(&self) -> usize {
        self.history.len()
    }

    pub fn window_success(&self) -> f64 {
        let w = WINDOW.min(self.history.len());
        rate(&self.history[self.history.len() - w..], |e| e.0)
    }

    pub fn record(&mut self, success: bool, collided: bool) -> Progress {
        self.history.push((success, collided));
        let stage = &self.stages[self.index];
        let n = self.history.len();
        if n < stage.min_episodes {
            return Progress::Stay;
        }
        let w = WINDOW.min(stage.min_episodes);
        let recent = &self.history[n - w..];
        let done = match stage.success_threshold {
            Some(threshold) => {
                rate(recent, |e| e.0) > threshold
                    && stage.max_collision_rate.is_none_or(|c| rate(recent, |e| e.1) < c)
            }
            None => {
                let earlier = &self.history[n.saturating_sub(2 * w)..n - w];
                n >= 2 * w && rate(recent, |e| e.0) <= rate(earlier, |e| e.0) + stage.plateau_gain
            }
        };
        let cap = STALL_FACTOR * stage.min_episodes;
        let last = self.index + 1 == self.stages.len();
        if done || (stage.success_threshold.is_none() && n >= cap) {
            if last {
                return Progress::Finished;
            }
            self.index += 1;
            self.history.clear();
            return Progress::Advance;
        }
        if n >= cap {
            return Progress::Stalled;
        }
        Progress::Stay
    }
}
