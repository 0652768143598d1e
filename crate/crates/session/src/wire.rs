//! Messages exchanged with a live client, one JSON object per text frame.

use crate::session::SessionConfig;
use brace_core::env::EnvState;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// First message on every connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub workspace: [f64; 2],
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Success,
    /// Reached a goal other than the intended one.
    WrongGoal,
    Collision,
    Timeout,
    Aborted,
}

impl TrialStatus {
    pub fn is_final(self) -> bool {
        self != TrialStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalView {
    pub id: usize,
    pub position: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub position: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOut {
    pub tick: u64,
    pub cursor: [f64; 2],
    pub goals: Vec<GoalView>,
    pub obstacles: Vec<ObstacleView>,
    pub belief: Vec<f64>,
    pub gamma: f64,
    pub map_goal_id: usize,
    pub status: TrialStatus,
    /// Most recent cursor positions, oldest first, each with its gamma.
    pub tail: Vec<[f64; 3]>,
    /// Set while inputs are stale and assistance is frozen at zero.
    pub safety_stale: bool,
}

impl FrameOut {
    pub fn scene(state: &EnvState) -> (Vec<GoalView>, Vec<ObstacleView>) {
        let goals = state
            .goals
            .iter()
            .map(|g| GoalView {
                id: g.id,
                position: [g.position.x, g.position.y],
                radius: g.radius,
            })
            .collect();
        let obstacles = state
            .obstacles
            .iter()
            .map(|o| ObstacleView {
                position: [o.position.x, o.position.y],
                radius: o.radius,
            })
            .collect();
        (goals, obstacles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameIn {
    /// Tick of the frame this input responds to.
    pub tick: u64,
    pub input: [f64; 2],
    #[serde(default)]
    pub manual_gamma: Option<f64>,
}

impl FrameIn {
    /// Input clamped to the unit square and gamma to the unit interval;
    /// non-finite values become zero.
    pub fn sanitized(self) -> Self {
        let c = |v: f64, lo: f64| if v.is_finite() { v.clamp(lo, 1.0) } else { 0.0 };
        Self {
            tick: self.tick,
            input: [c(self.input[0], -1.0), c(self.input[1], -1.0)],
            manual_gamma: self.manual_gamma.map(|g| c(g, 0.0)),
        }
    }
}
