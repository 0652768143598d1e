//! Deterministic planar goal-reaching environment.
//!
//! A point-mass cursor moves through a rectangular workspace populated with
//! circular goals and obstacles. Each step executes the blended action
//! `(1 - gamma) * human + gamma * expert` and clamps the result to the
//! workspace.

use crate::geom::{point_segment_distance, Vec2};
use crate::pilot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Reported as `nearest_obstacle_distance` when the workspace has no obstacles.
pub const NO_OBSTACLE_DISTANCE: f64 = 1.0e6;

/// Number of goals the fixed observation layout expects.
pub const OBS_GOALS: usize = 3;
/// Length of [`Environment::observation_vector`].
pub const OBS_DIM: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("generation infeasible: {constraint}")]
    GenerationInfeasible { constraint: String },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("observation layout mismatch: expected {expected} goals, found {found}")]
    ObservationLayout { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub width: f64,
    pub height: f64,
    /// Inset used for goal placement.
    pub margin: f64,
}

impl Workspace {
    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn within_margins(&self, p: Vec2) -> bool {
        p.x >= self.margin
            && p.x <= self.width - self.margin
            && p.y >= self.margin
            && p.y <= self.height - self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: usize,
    pub position: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub position: Vec2,
    pub radius: f64,
}

impl Obstacle {
    /// Distance from `p` to the obstacle boundary, zero inside.
    pub fn surface_distance(&self, p: Vec2) -> f64 {
        (p.distance(self.position) - self.radius).max(0.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.distance(self.position) < self.radius
    }
}

/// Curriculum difficulty, stages 1 through 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stage(u8);

impl Stage {
    pub const ALL: [Stage; 5] = [Stage(1), Stage(2), Stage(3), Stage(4), Stage(5)];

    pub fn new(id: u8) -> Result<Self, EnvError> {
        if (1..=5).contains(&id) {
            Ok(Stage(id))
        } else {
            Err(EnvError::InvalidConfig(format!("stage {id} outside 1..=5")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn goal_count(self) -> usize {
        match self.0 {
            1 | 2 => 1,
            3 => 2,
            _ => 3,
        }
    }

    pub fn obstacle_count(self) -> usize {
        match self.0 {
            1 => 0,
            2 => 2,
            3 => 4,
            4 => 3,
            _ => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub v_max: f64,
    pub max_steps: usize,
    pub success_radius: f64,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    pub min_goal_separation: f64,
    pub min_start_distance: f64,
    pub d_safe: f64,
    pub start: Vec2,
    /// Stage-4 goals all lie within this bearing cone seen from the start.
    pub cluster_cone_deg: f64,
    /// Stage-5 guarantees at least one goal pair within this bearing gap.
    pub ambiguous_pair_deg: f64,
    /// Gap between the stage-5 passage obstacles, as a multiple of `v_max`.
    pub passage_gap_steps: f64,
    /// When set, entering an obstacle ends the episode.
    pub terminal_on_collision: bool,
    pub max_retries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 600.0,
            margin: 50.0,
            v_max: 10.0,
            max_steps: 300,
            success_radius: 20.0,
            obstacle_radius_min: 25.0,
            obstacle_radius_max: 45.0,
            min_goal_separation: 100.0,
            min_start_distance: 300.0,
            d_safe: 120.0,
            start: Vec2::new(100.0, 300.0),
            cluster_cone_deg: 45.0,
            ambiguous_pair_deg: 30.0,
            passage_gap_steps: 2.2,
            terminal_on_collision: false,
            max_retries: 500,
        }
    }
}

impl EnvConfig {
    pub fn workspace(&self) -> Workspace {
        Workspace {
            width: self.width,
            height: self.height,
            margin: self.margin,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("workspace dimensions must be positive");
        }
        if !(self.margin >= 0.0 && self.margin < self.width.min(self.height) / 2.0) {
            return bad("margin must lie in [0, min(width, height)/2)");
        }
        if !(self.v_max > 0.0 && self.success_radius > 0.0 && self.d_safe > 0.0) {
            return bad("v_max, success_radius and d_safe must be positive");
        }
        if !(self.obstacle_radius_min > 0.0 && self.obstacle_radius_min <= self.obstacle_radius_max)
        {
            return bad("obstacle radius range is empty");
        }
        if !self.workspace().contains(self.start) {
            return bad("start lies outside the workspace");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub cursor: Vec2,
    pub cursor_velocity: Vec2,
    pub start: Vec2,
    pub goals: Vec<Goal>,
    pub obstacles: Vec<Obstacle>,
    pub step_index: usize,
    /// Hidden from the assistance policy.
    pub true_goal_id: usize,
}

impl EnvState {
    pub fn true_goal(&self) -> &Goal {
        &self.goals[self.true_goal_id]
    }

    pub fn nearest_obstacle_distance_at(&self, p: Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.surface_distance(p))
            .fold(NO_OBSTACLE_DISTANCE, f64::min)
    }

    /// Same geometry with a different hidden goal.
    pub fn with_true_goal(&self, goal_id: usize) -> EnvState {
        let mut s = self.clone();
        s.true_goal_id = goal_id;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub collision: bool,
    pub reached_goal_id: Option<usize>,
    /// Positive when the cursor moved closer to the true goal.
    pub distance_delta_to_true_goal: f64,
    pub success: bool,
    pub timed_out: bool,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub nearest_obstacle_distance: f64,
    pub constraint_severity: f64,
    pub per_goal_distances: [f64; OBS_GOALS],
    pub goal_count: usize,
}

/// Environment dynamics and generation under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    config: EnvConfig,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Procedurally builds the goal and obstacle layout for `(seed, stage)`.
    pub fn generate(&self, seed: u64, stage: Stage) -> Result<EnvState, EnvError> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage.id() as u64)));
        let mut last = String::from("no attempt made");
        for _ in 0..cfg.max_retries {
            match self.try_generate(&mut rng, stage) {
                Ok(state) => return Ok(state),
                Err(reason) => last = reason,
            }
        }
        Err(EnvError::GenerationInfeasible { constraint: last })
    }

    fn try_generate(&self, rng: &mut ChaCha8Rng, stage: Stage) -> Result<EnvState, String> {
        let cfg = &self.config;
        let ws = cfg.workspace();
        let goal_positions = self.place_goals(rng, stage)?;
        let goals: Vec<Goal> = goal_positions
            .iter()
            .enumerate()
            .map(|(id, &position)| Goal {
                id,
                position,
                radius: cfg.success_radius,
            })
            .collect();
        let true_goal_id = rng.random_range(0..goals.len());

        let mut obstacles: Vec<Obstacle> = Vec::new();
        let n_obs = stage.obstacle_count();
        if stage.id() == 5 && n_obs >= 2 {
            // Narrow passage straddling the path to the first goal.
            let g = goals[0].position;
            let dir = (g - cfg.start).normalized().ok_or("goal coincides with start")?;
            let t = rng.random_range(0.4..0.6);
            let center = cfg.start.lerp(g, t);
            let gap = cfg.passage_gap_steps * cfg.v_max;
            for side in [1.0, -1.0] {
                let r = rng.random_range(cfg.obstacle_radius_min..=cfg.obstacle_radius_max);
                let o = Obstacle {
                    position: center + dir.perp() * (side * (r + gap / 2.0)),
                    radius: r,
                };
                obstacles.push(o);
            }
            for o in &obstacles {
                self.check_obstacle(o, &goals, &[])?;
            }
        }
        let mut attempts = 0;
        while obstacles.len() < n_obs {
            attempts += 1;
            if attempts > 200 {
                return Err("obstacle placement: no position clears goals, start and other obstacles".into());
            }
            let g = goals[obstacles.len() % goals.len()].position;
            let seg = g - cfg.start;
            let t = rng.random_range(0.3..0.75);
            let r = rng.random_range(cfg.obstacle_radius_min..=cfg.obstacle_radius_max);
            let offset = rng.random_range(-1.0..1.0) * r;
            let dir = seg.normalized().ok_or("goal coincides with start")?;
            let o = Obstacle {
                position: cfg.start + seg * t + dir.perp() * offset,
                radius: r,
            };
            if self.check_obstacle(&o, &goals, &obstacles).is_ok() {
                obstacles.push(o);
            }
        }

        let state = EnvState {
            cursor: cfg.start,
            cursor_velocity: Vec2::ZERO,
            start: cfg.start,
            goals,
            obstacles,
            step_index: 0,
            true_goal_id,
        };
        for goal in &state.goals {
            pilot::plan_via_points(&state, goal, &ws, pilot::DEFAULT_CLEARANCE, pilot::DEFAULT_VIA_GAIN)
                .map_err(|e| format!("route to goal {}: {e}", goal.id))?;
        }
        Ok(state)
    }

    fn place_goals(&self, rng: &mut ChaCha8Rng, stage: Stage) -> Result<Vec<Vec2>, String> {
        let cfg = &self.config;
        let ws = cfg.workspace();
        let n = stage.goal_count();
        let x_lo = (0.45 * cfg.width).max(cfg.margin);
        let uniform = |rng: &mut ChaCha8Rng| {
            Vec2::new(
                rng.random_range(x_lo..=cfg.width - cfg.margin),
                rng.random_range(cfg.margin..=cfg.height - cfg.margin),
            )
        };
        let at_bearing = |rng: &mut ChaCha8Rng, bearing: f64| {
            let reach = rng.random_range(cfg.min_start_distance..=cfg.min_start_distance + 350.0);
            cfg.start + Vec2::from_angle(bearing) * reach
        };
        let center_bearing = rng.random_range(-0.45..0.45);
        let mut goals: Vec<Vec2> = Vec::with_capacity(n);
        let mut attempts = 0;
        while goals.len() < n {
            attempts += 1;
            if attempts > 400 {
                return Err(format!(
                    "goal placement: cannot keep {n} goals {} apart within margins",
                    cfg.min_goal_separation
                ));
            }
            let candidate = match (stage.id(), goals.len()) {
                (4, _) => {
                    let half = cfg.cluster_cone_deg.to_radians() / 2.0;
                    let b = center_bearing + rng.random_range(-half..=half);
                    at_bearing(rng, b)
                }
                (5, 0) => uniform(rng),
                (5, 1) => {
                    let b0 = (goals[0] - cfg.start).angle();
                    let span = cfg.ambiguous_pair_deg.to_radians();
                    let b = b0 + rng.random_range(-span..=span);
                    at_bearing(rng, b)
                }
                _ => uniform(rng),
            };
            let ok = ws.within_margins(candidate)
                && candidate.distance(cfg.start) >= cfg.min_start_distance
                && goals
                    .iter()
                    .all(|g| g.distance(candidate) >= cfg.min_goal_separation);
            if ok {
                goals.push(candidate);
            }
        }
        Ok(goals)
    }

    fn check_obstacle(&self, o: &Obstacle, goals: &[Goal], others: &[Obstacle]) -> Result<(), String> {
        let cfg = &self.config;
        if !cfg.workspace().contains(o.position) {
            return Err("obstacle center outside workspace".into());
        }
        for g in goals {
            if o.position.distance(g.position) < o.radius + g.radius + cfg.v_max {
                return Err(format!("obstacle overlaps goal {}", g.id));
            }
        }
        if o.position.distance(cfg.start) < o.radius + 3.0 * cfg.v_max {
            return Err("obstacle overlaps start".into());
        }
        let min_gap = cfg.passage_gap_steps * cfg.v_max - 1e-9;
        for other in others {
            if o.position.distance(other.position) - o.radius - other.radius < min_gap {
                return Err("obstacles closer than the passage gap".into());
            }
        }
        Ok(())
    }

    /// Executes the blended action for one step.
    pub fn step(
        &self,
        state: &EnvState,
        human_action: Vec2,
        expert_action: Vec2,
        gamma: f64,
    ) -> Result<(EnvState, StepOutcome), EnvError> {
        let cfg = &self.config;
        for (name, a) in [("human", human_action), ("expert", expert_action)] {
            if !a.is_finite() {
                return Err(EnvError::InvalidAction(format!("{name} action is not finite")));
            }
            if a.norm() > cfg.v_max * (1.0 + 1e-9) {
                return Err(EnvError::InvalidAction(format!(
                    "{name} action magnitude {} exceeds v_max {}",
                    a.norm(),
                    cfg.v_max
                )));
            }
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(EnvError::InvalidAction(format!("gamma {gamma} outside [0, 1]")));
        }
        let displacement = blend(human_action, expert_action, gamma);
        let ws = cfg.workspace();
        let cursor = ws.clamp(state.cursor + displacement);

        let collision = state.obstacles.iter().any(|o| o.contains(cursor));
        let reached_goal_id = if collision {
            None
        } else {
            state
                .goals
                .iter()
                .find(|g| cursor.distance(g.position) <= g.radius)
                .map(|g| g.id)
        };
        let goal = state.true_goal().position;
        let distance_delta_to_true_goal = state.cursor.distance(goal) - cursor.distance(goal);
        let success = reached_goal_id == Some(state.true_goal_id);
        let step_index = state.step_index + 1;
        let timed_out = !success && step_index >= cfg.max_steps;
        let done = success || timed_out || (collision && cfg.terminal_on_collision);

        let next = EnvState {
            cursor,
            cursor_velocity: cursor - state.cursor,
            step_index,
            ..state.clone()
        };
        Ok((
            next,
            StepOutcome {
                collision,
                reached_goal_id,
                distance_delta_to_true_goal,
                success,
                timed_out,
                done,
            },
        ))
    }

    pub fn context_features(&self, state: &EnvState) -> ContextFeatures {
        let nearest = state.nearest_obstacle_distance_at(state.cursor);
        let mut per_goal_distances = [0.0; OBS_GOALS];
        for (slot, g) in per_goal_distances.iter_mut().zip(&state.goals) {
            *slot = state.cursor.distance(g.position);
        }
        ContextFeatures {
            nearest_obstacle_distance: nearest,
            constraint_severity: constraint_severity(nearest, self.config.d_safe),
            per_goal_distances,
            goal_count: state.goals.len(),
        }
    }

    /// Frozen 10-entry layout:
    /// `[x, y, hx, hy, d1, d2, d3, nearest obstacle, severity, step fraction]`.
    ///
    /// Positions map to `[-1, 1]` across the workspace, inputs are divided
    /// by `v_max`, distances by the workspace diagonal (obstacle distance
    /// saturates at 1).
    pub fn observation_vector(&self, state: &EnvState, human_action: Vec2) -> Result<[f64; OBS_DIM], EnvError> {
        if state.goals.len() != OBS_GOALS {
            return Err(EnvError::ObservationLayout {
                expected: OBS_GOALS,
                found: state.goals.len(),
            });
        }
        Ok(self.observation_padded(state, human_action))
    }

    /// Observation for any goal count up to three; missing goals repeat the
    /// last goal's distance.
    pub fn observation_padded(&self, state: &EnvState, human_action: Vec2) -> [f64; OBS_DIM] {
        let cfg = &self.config;
        let diag = cfg.workspace().diagonal();
        let ctx = self.context_features(state);
        let mut d = [0.0; OBS_GOALS];
        for (i, slot) in d.iter_mut().enumerate() {
            let g = state.goals[i.min(state.goals.len() - 1)];
            *slot = state.cursor.distance(g.position) / diag;
        }
        [
            (state.cursor.x - cfg.width / 2.0) / (cfg.width / 2.0),
            (state.cursor.y - cfg.height / 2.0) / (cfg.height / 2.0),
            human_action.x / cfg.v_max,
            human_action.y / cfg.v_max,
            d[0],
            d[1],
            d[2],
            (ctx.nearest_obstacle_distance / diag).min(1.0),
            ctx.constraint_severity,
            state.step_index as f64 / cfg.max_steps as f64,
        ]
    }
}

/// `(1 - gamma) * h + gamma * w`.
pub fn blend(h: Vec2, w: Vec2, gamma: f64) -> Vec2 {
    h * (1.0 - gamma) + w * gamma
}

pub fn constraint_severity(nearest_obstacle_distance: f64, d_safe: f64) -> f64 {
    (1.0 - nearest_obstacle_distance / d_safe).clamp(0.0, 1.0)
}

/// Bearing gap between two points seen from `from`, in `[0, pi]`.
pub fn bearing_gap(from: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = ((a - from).angle() - (b - from).angle()).abs() % (2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Whether the straight segment `a` to `b` passes within `clearance` of any obstacle.
pub fn segment_blocked(obstacles: &[Obstacle], a: Vec2, b: Vec2, clearance: f64) -> Option<usize> {
    obstacles
        .iter()
        .enumerate()
        .filter(|(_, o)| point_segment_distance(o.position, a, b) < o.radius + clearance)
        .min_by(|(_, x), (_, y)| {
            let dir = b - a;
            (x.position - a).dot(dir).total_cmp(&(y.position - a).dot(dir))
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Environment {
        Environment::new(EnvConfig::default()).unwrap()
    }

    fn bare_state() -> EnvState {
        EnvState {
            cursor: Vec2::new(400.0, 300.0),
            cursor_velocity: Vec2::ZERO,
            start: Vec2::new(400.0, 300.0),
            goals: vec![Goal {
                id: 0,
                position: Vec2::new(700.0, 300.0),
                radius: 20.0,
            }],
            obstacles: vec![],
            step_index: 0,
            true_goal_id: 0,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let e = env();
        let a = e.generate(7, Stage::new(1).unwrap()).unwrap();
        let b = e.generate(7, Stage::new(1).unwrap()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn stage_counts_match_mapping() {
        let e = env();
        for stage in Stage::ALL {
            for seed in 0..20 {
                let s = e.generate(seed, stage).unwrap();
                assert_eq!(s.goals.len(), stage.goal_count());
                assert_eq!(s.obstacles.len(), stage.obstacle_count());
                assert!(s.true_goal_id < s.goals.len());
            }
        }
    }

    #[test]
    fn goal_separation_holds() {
        let e = env();
        for stage in Stage::ALL {
            let s = e.generate(7, stage).unwrap();
            for (i, a) in s.goals.iter().enumerate() {
                assert!(e.config().workspace().within_margins(a.position));
                for b in &s.goals[i + 1..] {
                    assert!(a.position.distance(b.position) >= 100.0);
                }
            }
        }
    }

    #[test]
    fn stage4_goals_share_a_cone() {
        let e = env();
        for seed in 0..30 {
            let s = e.generate(seed, Stage::new(4).unwrap()).unwrap();
            for a in &s.goals {
                for b in &s.goals {
                    assert!(bearing_gap(s.start, a.position, b.position) <= 45f64.to_radians() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn stage5_has_narrow_passage() {
        let e = env();
        let s = e.generate(11, Stage::new(5).unwrap()).unwrap();
        let (a, b) = (s.obstacles[0], s.obstacles[1]);
        let gap = a.position.distance(b.position) - a.radius - b.radius;
        assert!((gap - 22.0).abs() < 1e-9);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let e = env();
        let s = bare_state();
        let h = Vec2::new(1.0, 0.0);
        let w = Vec2::new(0.0, 1.0);
        for (gamma, expect) in [(0.0, h), (1.0, w), (0.5, Vec2::new(0.5, 0.5))] {
            let (next, _) = e.step(&s, h, w, gamma).unwrap();
            assert_eq!(next.cursor - s.cursor, expect);
        }
    }

    #[test]
    fn rejects_non_finite_actions() {
        let e = env();
        let s = bare_state();
        let err = e.step(&s, Vec2::new(f64::NAN, 0.0), Vec2::ZERO, 0.5).unwrap_err();
        assert!(matches!(err, EnvError::InvalidAction(_)));
        assert!(e.step(&s, Vec2::new(11.0, 0.0), Vec2::ZERO, 0.5).is_err());
    }

    #[test]
    fn collision_wins_ties_with_goal_entry() {
        let e = env();
        let mut s = bare_state();
        s.cursor = Vec2::new(675.0, 300.0);
        s.obstacles.push(Obstacle {
            position: Vec2::new(690.0, 300.0),
            radius: 25.0,
        });
        let (_, out) = e.step(&s, Vec2::new(10.0, 0.0), Vec2::ZERO, 0.0).unwrap();
        assert!(out.collision);
        assert_eq!(out.reached_goal_id, None);
        assert!(!out.success);
        assert!(!out.done, "collision is not terminal by default");
    }

    #[test]
    fn strict_mode_ends_on_collision() {
        let e = Environment::new(EnvConfig {
            terminal_on_collision: true,
            ..EnvConfig::default()
        })
        .unwrap();
        let mut s = bare_state();
        s.obstacles.push(Obstacle {
            position: Vec2::new(420.0, 300.0),
            radius: 25.0,
        });
        let (_, out) = e.step(&s, Vec2::new(5.0, 0.0), Vec2::ZERO, 0.0).unwrap();
        assert!(out.collision && out.done);
    }

    #[test]
    fn success_and_timeout() {
        let e = env();
        let mut s = bare_state();
        s.cursor = Vec2::new(675.0, 300.0);
        let (_, out) = e.step(&s, Vec2::new(10.0, 0.0), Vec2::ZERO, 0.0).unwrap();
        assert!(out.success && out.done && out.reached_goal_id == Some(0));
        let mut s = bare_state();
        s.step_index = 299;
        let (_, out) = e.step(&s, Vec2::ZERO, Vec2::ZERO, 0.0).unwrap();
        assert!(out.timed_out && out.done);
    }

    #[test]
    fn cursor_is_clamped() {
        let e = env();
        let mut s = bare_state();
        s.cursor = Vec2::new(795.0, 595.0);
        let (next, _) = e.step(&s, Vec2::new(7.0, 7.0), Vec2::ZERO, 0.0).unwrap();
        assert_eq!(next.cursor, Vec2::new(800.0, 600.0));
    }

    #[test]
    fn context_without_obstacles() {
        let e = env();
        let ctx = e.context_features(&bare_state());
        assert_eq!(ctx.constraint_severity, 0.0);
        assert_eq!(ctx.nearest_obstacle_distance, NO_OBSTACLE_DISTANCE);
    }

    #[test]
    fn context_boundary_and_safe_distance() {
        let e = env();
        let mut s = bare_state();
        s.obstacles.push(Obstacle {
            position: Vec2::new(430.0, 300.0),
            radius: 30.0,
        });
        let ctx = e.context_features(&s);
        assert_eq!(ctx.nearest_obstacle_distance, 0.0);
        assert_eq!(ctx.constraint_severity, 1.0);
        // 120 = d_safe from the boundary
        s.obstacles[0].position = Vec2::new(550.0, 300.0);
        let ctx = e.context_features(&s);
        assert!((ctx.nearest_obstacle_distance - 120.0).abs() < 1e-12);
        assert_eq!(ctx.constraint_severity, 0.0);
        s.obstacles[0].position = Vec2::new(490.0, 300.0);
        let ctx = e.context_features(&s);
        assert!((ctx.constraint_severity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn observation_requires_three_goals() {
        let e = env();
        let err = e.observation_vector(&bare_state(), Vec2::ZERO).unwrap_err();
        assert_eq!(err, EnvError::ObservationLayout { expected: 3, found: 1 });
    }

    #[test]
    fn observation_fixture() {
        let e = env();
        let mut s = bare_state();
        s.goals = vec![
            Goal { id: 0, position: Vec2::new(700.0, 300.0), radius: 20.0 },
            Goal { id: 1, position: Vec2::new(400.0, 500.0), radius: 20.0 },
            Goal { id: 2, position: Vec2::new(100.0, 300.0), radius: 20.0 },
        ];
        s.obstacles.push(Obstacle { position: Vec2::new(400.0, 100.0), radius: 40.0 });
        s.step_index = 30;
        let obs = e.observation_vector(&s, Vec2::new(5.0, -5.0)).unwrap();
        let expect = [0.0, 0.0, 0.5, -0.5, 0.3, 0.2, 0.3, 0.16, 0.0, 0.1];
        for (a, b) in obs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{obs:?}");
        }
    }

    #[test]
    fn observation_symmetric_goals_give_equal_distances() {
        let e = env();
        let mut s = bare_state();
        let c = Vec2::new(400.0, 300.0);
        s.goals = (0..3)
            .map(|i| Goal {
                id: i,
                position: c + Vec2::from_angle(i as f64 * 2.0 * PI / 3.0) * 200.0,
                radius: 20.0,
            })
            .collect();
        let obs = e.observation_vector(&s, Vec2::ZERO).unwrap();
        assert!((obs[4] - obs[5]).abs() < 1e-12 && (obs[5] - obs[6]).abs() < 1e-12);
        assert_eq!(obs[9], 0.0);
    }
}
