//! Goal-conditioned scripted expert scored by a progress, smoothness and
//! obstacle-repulsion reward, with degraded variants.

use crate::env::{EnvConfig, EnvState, Goal, Obstacle, Workspace, NO_OBSTACLE_DISTANCE};
use crate::geom::{point_segment_distance, wrap_angle, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::TAU;
use thiserror::Error;

pub const W_PROGRESS: f64 = 3.0;
pub const W_SMOOTH: f64 = 0.8;
/// Per-step discount inside planner rollouts.
pub const ROLLOUT_DISCOUNT: f64 = 0.99;
pub const W_REPULSE: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum ExpertError {
    #[error("invalid expert config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertMode {
    Full,
    HorizonLimited,
    Delayed,
    RandomPerturbed,
}

impl ExpertMode {
    pub const ALL: [ExpertMode; 4] = [
        ExpertMode::Full,
        ExpertMode::HorizonLimited,
        ExpertMode::Delayed,
        ExpertMode::RandomPerturbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpertMode::Full => "full",
            ExpertMode::HorizonLimited => "horizon_limited",
            ExpertMode::Delayed => "delayed",
            ExpertMode::RandomPerturbed => "random_perturbed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub mode: ExpertMode,
    /// Look-ahead steps simulated after the candidate action.
    pub horizon: usize,
    /// Look-ahead used by `horizon_limited`, which also drops the guide
    /// field and continues in a straight line toward the goal.
    pub limited_horizon: usize,
    pub delay: usize,
    pub perturb_sigma: f64,
    pub directions: usize,
    pub magnitudes: usize,
    pub seed: u64,
    /// Grid spacing of the guide field.
    pub grid_cell: f64,
    /// Surface distance below which guide paths pay extra.
    pub guide_margin: f64,
    /// Extra path cost per unit length at zero surface distance.
    pub guide_penalty: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            mode: ExpertMode::Full,
            horizon: 60,
            limited_horizon: 10,
            delay: 5,
            perturb_sigma: 16.0,
            directions: 16,
            magnitudes: 3,
            seed: 0,
            grid_cell: 5.0,
            guide_margin: 15.0,
            guide_penalty: 4.0,
        }
    }
}

impl ExpertConfig {
    pub fn with_mode(mode: ExpertMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.horizon == 0 || self.limited_horizon == 0 {
            return Err(ExpertError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.perturb_sigma >= 0.0) {
            return Err(ExpertError::InvalidConfig("perturb_sigma must be non-negative".into()));
        }
        if !(self.grid_cell > 0.0 && self.guide_margin >= 0.0 && self.guide_penalty >= 0.0) {
            return Err(ExpertError::InvalidConfig("guide field parameters out of range".into()));
        }
        if self.directions == 0 || self.magnitudes == 0 {
            return Err(ExpertError::InvalidConfig("candidate grid is empty".into()));
        }
        Ok(())
    }

    pub fn effective_horizon(&self) -> usize {
        match self.mode {
            ExpertMode::HorizonLimited => self.limited_horizon,
            _ => self.horizon,
        }
    }
}

/// Per-episode expert history.
#[derive(Debug, Clone)]
pub struct ExpertMemory {
    pending: VecDeque<Vec2>,
    rng: ChaCha8Rng,
    fields: Vec<(Vec<Obstacle>, GuideField)>,
}

impl ExpertMemory {
    pub fn new(cfg: &ExpertConfig) -> Self {
        Self {
            pending: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            fields: Vec::new(),
        }
    }

    /// Cached guide field for `goal` under the given obstacle layout.
    pub fn field_for(&mut self, goal: &Goal, obstacles: &[Obstacle], env: &EnvConfig, cfg: &ExpertConfig) -> &GuideField {
        let hit = self
            .fields
            .iter()
            .position(|(obs, f)| f.goal == goal.position && obs.as_slice() == obstacles);
        let idx = match hit {
            Some(i) => i,
            None => {
                self.fields.push((obstacles.to_vec(), GuideField::build(goal, obstacles, env, cfg)));
                self.fields.len() - 1
            }
        };
        &self.fields[idx].1
    }
}

/// Heading of a displacement, if it has one.
pub fn heading(v: Vec2) -> Option<f64> {
    (v.norm() > 1e-12).then(|| v.angle())
}

fn nearest_surface(obstacles: &[Obstacle], p: Vec2) -> f64 {
    obstacles
        .iter()
        .map(|o| o.surface_distance(p))
        .fold(NO_OBSTACLE_DISTANCE, f64::min)
}

/// Reward of moving from `from` by `action`, landing at `to`.
#[allow(clippy::too_many_arguments)]
fn reward_terms(
    from: Vec2,
    to: Vec2,
    action: Vec2,
    goal: Vec2,
    prev_heading: Option<f64>,
    obstacles: &[Obstacle],
    d_max: f64,
    d_safe: f64,
) -> f64 {
    let progress = (from.distance(goal) - to.distance(goal)) / d_max;
    let turn = match (prev_heading, heading(action)) {
        (Some(p), Some(a)) => wrap_angle(a - p),
        _ => 0.0,
    };
    let repulse = (-nearest_surface(obstacles, to) / d_safe).exp();
    W_PROGRESS * progress - W_SMOOTH * turn * turn - W_REPULSE * repulse
}

/// Single-step expert reward for taking `action` in `state` toward `goal`.
pub fn expert_reward(state: &EnvState, action: Vec2, goal: &Goal, prev_heading: Option<f64>, env: &EnvConfig) -> f64 {
    let ws = env.workspace();
    let to = ws.clamp(state.cursor + action);
    reward_terms(
        state.cursor,
        to,
        to - state.cursor,
        goal.position,
        prev_heading,
        &state.obstacles,
        ws.diagonal(),
        env.d_safe,
    )
}

/// Candidate actions: `directions` headings anchored on the goal bearing,
/// each at `magnitudes` evenly spaced speeds up to `v_max`.
pub fn candidate_grid(cursor: Vec2, goal: Vec2, v_max: f64, directions: usize, magnitudes: usize) -> Vec<Vec2> {
    let base = (goal - cursor).angle();
    let mut out = Vec::with_capacity(directions * magnitudes);
    for k in 0..directions {
        let dir = Vec2::from_angle(base + TAU * k as f64 / directions as f64);
        for m in 1..=magnitudes {
            out.push(dir * (v_max * m as f64 / magnitudes as f64));
        }
    }
    out
}

/// Shortest-path guide toward one goal on a regular grid. Dijkstra runs
/// over 8-connected nodes; travel inside the clearance margin of an
/// obstacle costs extra and nodes inside an obstacle are impassable. Each
/// node stores a look-ahead point a few hops down its shortest path.
#[derive(Debug, Clone)]
pub struct GuideField {
    goal: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    dist: Vec<f64>,
    carrot: Vec<Vec2>,
}

impl GuideField {
    pub fn build(goal: &Goal, obstacles: &[Obstacle], env: &EnvConfig, cfg: &ExpertConfig) -> Self {
        let cell = cfg.grid_cell;
        let nx = (env.width / cell).ceil() as usize + 1;
        let ny = (env.height / cell).ceil() as usize + 1;
        let node = |k: usize| Vec2::new((k % nx) as f64 * cell, (k / nx) as f64 * cell);
        let weight: Vec<f64> = (0..nx * ny)
            .map(|k| {
                let s = nearest_surface(obstacles, node(k));
                if s < 0.0 {
                    f64::INFINITY
                } else if s < cfg.guide_margin {
                    1.0 + cfg.guide_penalty * (1.0 - s / cfg.guide_margin)
                } else {
                    1.0
                }
            })
            .collect();
        let mut dist = vec![f64::INFINITY; nx * ny];
        let mut parent = vec![usize::MAX; nx * ny];
        let mut heap = BinaryHeap::new();
        for k in 0..nx * ny {
            if node(k).distance(goal.position) <= goal.radius && weight[k].is_finite() {
                dist[k] = 0.0;
                heap.push(Reverse((OrdF64(0.0), k)));
            }
        }
        const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        while let Some(Reverse((OrdF64(d), k))) = heap.pop() {
            if d > dist[k] {
                continue;
            }
            let (i, j) = ((k % nx) as i64, (k / nx) as i64);
            for (di, dj) in NEIGHBORS {
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    continue;
                }
                let m = b as usize * nx + a as usize;
                if !weight[m].is_finite() {
                    continue;
                }
                let len = cell * ((di * di + dj * dj) as f64).sqrt();
                let nd = d + len * 0.5 * (weight[k] + weight[m]);
                if nd < dist[m] {
                    dist[m] = nd;
                    parent[m] = k;
                    heap.push(Reverse((OrdF64(nd), m)));
                }
            }
        }
        let hops = (2.0 * env.v_max / cell).ceil() as usize;
        let carrot = (0..nx * ny)
            .map(|k| {
                if !dist[k].is_finite() {
                    return goal.position;
                }
                let mut c = k;
                for _ in 0..hops {
                    if parent[c] == usize::MAX {
                        return goal.position;
                    }
                    c = parent[c];
                }
                node(c)
            })
            .collect();
        Self {
            goal: goal.position,
            cell,
            nx,
            ny,
            dist,
            carrot,
        }
    }

    fn nearest_node(&self, p: Vec2) -> usize {
        let i = ((p.x / self.cell).round().max(0.0) as usize).min(self.nx - 1);
        let j = ((p.y / self.cell).round().max(0.0) as usize).min(self.ny - 1);
        j * self.nx + i
    }

    /// Guide path length from the grid node nearest `p`.
    pub fn distance_at(&self, p: Vec2) -> f64 {
        self.dist[self.nearest_node(p)]
    }

    /// Point the base policy steers toward from `p`.
    pub fn target_from(&self, p: Vec2) -> Vec2 {
        let c = self.carrot[self.nearest_node(p)];
        if c.distance(p) < 1e-9 {
            self.goal
        } else {
            c
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Planner<'a> {
    goal: &'a Goal,
    obstacles: &'a [Obstacle],
    ws: Workspace,
    v_max: f64,
    d_safe: f64,
    /// Base policy for look-ahead; straight toward the goal when absent.
    field: Option<&'a GuideField>,
}

impl Planner<'_> {
    fn hits(&self, a: Vec2, b: Vec2) -> bool {
        self.obstacles
            .iter()
            .any(|o| point_segment_distance(o.position, a, b) < o.radius)
    }

    fn reward(&self, from: Vec2, to: Vec2, prev_heading: Option<f64>) -> f64 {
        reward_terms(
            from,
            to,
            to - from,
            self.goal.position,
            prev_heading,
            self.obstacles,
            self.ws.diagonal(),
            self.d_safe,
        )
    }

    /// Discounted expert-reward return of `first` followed by `horizon`
    /// base-policy steps, stopping at goal entry, and whether any step
    /// touched an obstacle. Progress past the goal boundary is not credited,
    /// so overshooting into the disc never beats arriving sooner.
    fn rollout(&self, cursor: Vec2, first: Vec2, prev_heading: Option<f64>, horizon: usize) -> (bool, f64) {
        let mut pos = self.ws.clamp(cursor + first);
        let mut ret = self.step_return(cursor, pos, prev_heading);
        let mut collided = self.hits(cursor, pos);
        let mut last = heading(pos - cursor).or(prev_heading);
        let mut weight = 1.0;
        for _ in 0..horizon {
            if pos.distance(self.goal.position) <= self.goal.radius {
                break;
            }
            weight *= ROLLOUT_DISCOUNT;
            let target = self.field.map_or(self.goal.position, |g| g.target_from(pos));
            let next = self.ws.clamp(pos + (target - pos).clamp_norm(self.v_max));
            ret += weight * self.step_return(pos, next, last);
            collided |= self.hits(pos, next);
            last = heading(next - pos).or(last);
            pos = next;
        }
        (collided, ret)
    }

    fn step_return(&self, from: Vec2, to: Vec2, prev_heading: Option<f64>) -> f64 {
        let overshoot = (self.goal.radius - to.distance(self.goal.position)).max(0.0);
        self.reward(from, to, prev_heading) - W_PROGRESS * overshoot / self.ws.diagonal()
    }
}

/// Best first action by exhaustive candidate scoring. Rollouts that touch
/// an obstacle lose to every collision-free rollout. `horizon_limited`
/// looks ahead without the guide field; every other mode plans like `full`.
/// A missing field is built on the spot.
pub fn planned_action(
    state: &EnvState,
    goal: &Goal,
    cfg: &ExpertConfig,
    env: &EnvConfig,
    field: Option<&GuideField>,
) -> Vec2 {
    if state.cursor.distance(goal.position) < 1e-9 {
        return Vec2::ZERO;
    }
    let owned;
    let field = match (cfg.mode, field) {
        (ExpertMode::HorizonLimited, _) => None,
        (_, Some(f)) => Some(f),
        (_, None) => {
            owned = GuideField::build(goal, &state.obstacles, env, cfg);
            Some(&owned)
        }
    };
    let planner = Planner {
        goal,
        obstacles: &state.obstacles,
        ws: env.workspace(),
        v_max: env.v_max,
        d_safe: env.d_safe,
        field,
    };
    let prev = heading(state.cursor_velocity);
    let horizon = cfg.effective_horizon();
    let mut best = ((false, f64::NEG_INFINITY), Vec2::ZERO);
    for a in candidate_grid(state.cursor, goal.position, env.v_max, cfg.directions, cfg.magnitudes) {
        let (collided, score) = planner.rollout(state.cursor, a, prev, horizon);
        let key = (!collided, score);
        if key.0 > best.0 .0 || (key.0 == best.0 .0 && key.1 > best.0 .1) {
            best = (key, a);
        }
    }
    best.1
}

/// Expert action for the current step under the configured mode.
pub fn expert_action(
    state: &EnvState,
    goal: &Goal,
    cfg: &ExpertConfig,
    memory: &mut ExpertMemory,
    env: &EnvConfig,
) -> Vec2 {
    let field = match cfg.mode {
        ExpertMode::HorizonLimited => None,
        _ => Some(memory.field_for(goal, &state.obstacles, env, cfg)),
    };
    let planned = planned_action(state, goal, cfg, env, field.map(|f| &*f));
    match cfg.mode {
        ExpertMode::Full | ExpertMode::HorizonLimited => planned,
        ExpertMode::Delayed => {
            memory.pending.push_back(planned);
            if memory.pending.len() > cfg.delay {
                memory.pending.pop_front().unwrap_or(Vec2::ZERO)
            } else {
                Vec2::ZERO
            }
        }
        ExpertMode::RandomPerturbed => {
            let noise = if cfg.perturb_sigma > 0.0 {
                let n = Normal::new(0.0, cfg.perturb_sigma).expect("finite sigma");
                Vec2::new(n.sample(&mut memory.rng), n.sample(&mut memory.rng))
            } else {
                Vec2::ZERO
            };
            (planned + noise).clamp_norm(env.v_max)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(goals: &[(f64, f64)]) -> EnvState {
        EnvState {
            cursor: Vec2::new(100.0, 300.0),
            cursor_velocity: Vec2::ZERO,
            start: Vec2::new(100.0, 300.0),
            goals: goals
                .iter()
                .enumerate()
                .map(|(id, &(x, y))| Goal {
                    id,
                    position: Vec2::new(x, y),
                    radius: 20.0,
                })
                .collect(),
            obstacles: vec![],
            step_index: 0,
            true_goal_id: 0,
        }
    }

    #[test]
    fn straight_reward_is_progress_only() {
        let env = EnvConfig::default();
        let s = state(&[(600.0, 300.0)]);
        let r = expert_reward(&s, Vec2::new(10.0, 0.0), &s.goals[0], Some(0.0), &env);
        assert_relative_eq!(r, 3.0 * 10.0 / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_action_leaves_repulsion_only() {
        let env = EnvConfig::default();
        let mut s = state(&[(600.0, 300.0)]);
        s.obstacles.push(Obstacle {
            position: Vec2::new(100.0, 400.0),
            radius: 40.0,
        });
        let r = expert_reward(&s, Vec2::ZERO, &s.goals[0], Some(1.0), &env);
        assert_relative_eq!(r, -2.5 * (-60.0f64 / 120.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn boundary_contact_costs_full_repulsion() {
        let env = EnvConfig::default();
        let mut s = state(&[(600.0, 300.0)]);
        s.obstacles.push(Obstacle {
            position: Vec2::new(100.0, 340.0),
            radius: 40.0,
        });
        let r = expert_reward(&s, Vec2::ZERO, &s.goals[0], None, &env);
        assert_relative_eq!(r, -2.5, epsilon = 1e-12);
    }

    #[test]
    fn heading_change_is_penalized_quadratically() {
        let env = EnvConfig::default();
        let s = state(&[(100.0, 560.0)]);
        let r = expert_reward(&s, Vec2::new(0.0, 10.0), &s.goals[0], Some(0.0), &env);
        let expected = 3.0 * 10.0 / 1000.0 - 0.8 * std::f64::consts::FRAC_PI_2.powi(2);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn open_field_action_heads_due_east_at_full_speed() {
        let env = EnvConfig::default();
        let s = state(&[(600.0, 300.0)]);
        for mode in [ExpertMode::Full, ExpertMode::HorizonLimited] {
            let cfg = ExpertConfig::with_mode(mode);
            let a = expert_action(&s, &s.goals[0], &cfg, &mut ExpertMemory::new(&cfg), &env);
            assert!(a.angle().abs() <= TAU / 16.0 + 1e-12, "{mode:?}: {a:?}");
            assert_relative_eq!(a.norm(), env.v_max, epsilon = 1e-9);
        }
    }

    #[test]
    fn delayed_mode_is_cold_at_start() {
        let env = EnvConfig::default();
        let s = state(&[(600.0, 300.0)]);
        let cfg = ExpertConfig {
            delay: 2,
            ..ExpertConfig::with_mode(ExpertMode::Delayed)
        };
        let mut mem = ExpertMemory::new(&cfg);
        assert_eq!(expert_action(&s, &s.goals[0], &cfg, &mut mem, &env), Vec2::ZERO);
        assert_eq!(expert_action(&s, &s.goals[0], &cfg, &mut mem, &env), Vec2::ZERO);
        assert!(expert_action(&s, &s.goals[0], &cfg, &mut mem, &env).norm() > 0.0);
    }

    #[test]
    fn swapping_goal_flips_goalward_component() {
        let env = EnvConfig::default();
        let mut s = state(&[(650.0, 300.0), (150.0, 300.0)]);
        s.cursor = Vec2::new(400.0, 300.0);
        let cfg = ExpertConfig::default();
        let east = planned_action(&s, &s.goals[0], &cfg, &env, None);
        let west = planned_action(&s, &s.goals[1], &cfg, &env, None);
        assert!(east.x > 0.0 && west.x < 0.0);
    }

    #[test]
    fn full_mode_is_deterministic() {
        let env = EnvConfig::default();
        let mut s = state(&[(650.0, 200.0)]);
        s.obstacles.push(Obstacle {
            position: Vec2::new(380.0, 250.0),
            radius: 35.0,
        });
        let cfg = ExpertConfig::default();
        let a = planned_action(&s, &s.goals[0], &cfg, &env, None);
        let b = planned_action(&s, &s.goals[0], &cfg, &env, None);
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_mode_stays_within_speed_limit() {
        let env = EnvConfig::default();
        let s = state(&[(600.0, 300.0)]);
        let cfg = ExpertConfig {
            perturb_sigma: 50.0,
            ..ExpertConfig::with_mode(ExpertMode::RandomPerturbed)
        };
        let mut mem = ExpertMemory::new(&cfg);
        for _ in 0..20 {
            assert!(expert_action(&s, &s.goals[0], &cfg, &mut mem, &env).norm() <= env.v_max + 1e-9);
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let cfg = ExpertConfig {
            horizon: 0,
            ..ExpertConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
