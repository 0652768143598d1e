//! Simulated noisy-rational human pilot.
//!
//! The deterministic part tracks a minimum-jerk reference along a via-point
//! route to the true goal. Control variability is white Gaussian noise passed
//! through the first-order filter `y[n] = a*y[n-1] + (1-a)*x[n]` and scaled
//! relative to the straight-line trajectory length.

use crate::belief::{CalibrationStep, CalibrationTrajectory};
use crate::env::{segment_blocked, EnvConfig, EnvState, Environment, Goal, Obstacle, Stage, Workspace};
use crate::geom::{point_segment_distance, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub const DEFAULT_CLEARANCE: f64 = 15.0;
pub const DEFAULT_VIA_GAIN: f64 = 1.3;
const MAX_PLAN_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum PilotError {
    #[error("path planning failed: {0}")]
    PlanningFailed(String),
    #[error("invalid pilot config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    /// Noise RMS as a fraction of the straight-line trajectory length.
    pub noise_amplitude: f64,
    pub ar_coefficient: f64,
    pub via_point_gain: f64,
    pub clearance: f64,
    pub reaction_delay: usize,
    pub rng_seed: u64,
    /// Per-step normalization applied to `noise_amplitude * length`.
    pub noise_step_scale: f64,
    /// Peak speed of the minimum-jerk reference as a fraction of `v_max`.
    pub peak_speed_fraction: f64,
    pub via_reach_radius: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            noise_amplitude: 0.032,
            ar_coefficient: 0.5,
            via_point_gain: DEFAULT_VIA_GAIN,
            clearance: DEFAULT_CLEARANCE,
            reaction_delay: 0,
            rng_seed: 0,
            noise_step_scale: 0.7,
            peak_speed_fraction: 0.8,
            via_reach_radius: 20.0,
        }
    }
}

impl PilotConfig {
    pub fn noiseless() -> Self {
        Self {
            noise_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PilotError> {
        if !(0.0..=0.1).contains(&self.noise_amplitude) {
            return Err(PilotError::InvalidConfig("noise_amplitude outside [0, 0.1]".into()));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(PilotError::InvalidConfig("ar_coefficient outside [0, 1)".into()));
        }
        if !(self.peak_speed_fraction > 0.0 && self.peak_speed_fraction <= 1.0) {
            return Err(PilotError::InvalidConfig("peak_speed_fraction outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// First-order auto-regressive smoother `y[n] = a*y[n-1] + (1-a)*x[n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArFilter {
    pub coefficient: f64,
    pub memory: Vec2,
}

impl ArFilter {
    pub fn new(coefficient: f64) -> Self {
        Self {
            coefficient,
            memory: Vec2::ZERO,
        }
    }

    pub fn push(&mut self, x: Vec2) -> Vec2 {
        let a = self.coefficient;
        self.memory = self.memory * a + x * (1.0 - a);
        self.memory
    }

    /// Ratio of output to input standard deviation for white input.
    pub fn gain(coefficient: f64) -> f64 {
        ((1.0 - coefficient) / (1.0 + coefficient)).sqrt()
    }
}

/// Minimum-jerk position fraction `10t^3 - 15t^4 + 6t^5`.
pub fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Percept {
    cursor: Vec2,
    goal: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Segment {
    from: Vec2,
    to: Vec2,
    step: usize,
    duration: usize,
}

/// Per-episode pilot memory.
#[derive(Debug, Clone)]
pub struct PilotState {
    pub noise_memory: ArFilter,
    pub planned_via_points: Vec<Vec2>,
    pub current_target_index: usize,
    planned_goal: Vec2,
    segment: Segment,
    trajectory_length: f64,
    percepts: VecDeque<Percept>,
    rng: ChaCha8Rng,
    stream_probe: u64,
    last_noise: Vec2,
    last_deterministic: Vec2,
}

impl PilotState {
    pub fn new(state: &EnvState, env: &EnvConfig, cfg: &PilotConfig) -> Result<Self, PilotError> {
        cfg.validate()?;
        let goal = *state.true_goal();
        let ws = env.workspace();
        let via = plan_route(state.cursor, goal.position, &state.obstacles, &ws, cfg.clearance, cfg.via_point_gain)
            .unwrap_or_default();
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let stream_probe = probe_checksum(&rng);
        let mut pilot = Self {
            noise_memory: ArFilter::new(cfg.ar_coefficient),
            planned_via_points: via,
            current_target_index: 0,
            planned_goal: goal.position,
            segment: Segment {
                from: state.cursor,
                to: state.cursor,
                step: 0,
                duration: 1,
            },
            trajectory_length: state.start.distance(goal.position),
            percepts: VecDeque::new(),
            rng,
            stream_probe,
            last_noise: Vec2::ZERO,
            last_deterministic: Vec2::ZERO,
        };
        pilot.begin_segment(state.cursor, env, cfg);
        Ok(pilot)
    }

    /// Checksum of the first samples of this pilot's white-noise stream.
    pub fn stream_probe(&self) -> u64 {
        self.stream_probe
    }

    pub fn last_noise(&self) -> Vec2 {
        self.last_noise
    }

    pub fn last_deterministic(&self) -> Vec2 {
        self.last_deterministic
    }

    pub fn trajectory_length(&self) -> f64 {
        self.trajectory_length
    }

    fn current_target(&self) -> Vec2 {
        self.planned_via_points
            .get(self.current_target_index)
            .copied()
            .unwrap_or(self.planned_goal)
    }

    fn begin_segment(&mut self, from: Vec2, env: &EnvConfig, cfg: &PilotConfig) {
        let to = self.current_target();
        let peak = cfg.peak_speed_fraction * env.v_max;
        let duration = ((1.875 * from.distance(to) / peak).ceil() as usize).max(1);
        self.segment = Segment {
            from,
            to,
            step: 0,
            duration,
        };
    }

    /// Expected RMS of the injected noise per step.
    pub fn noise_rms(&self, cfg: &PilotConfig) -> f64 {
        cfg.noise_amplitude * self.trajectory_length * cfg.noise_step_scale
    }

    /// Produces the human input for the current state.
    pub fn action(&mut self, state: &EnvState, env: &EnvConfig, cfg: &PilotConfig) -> Vec2 {
        self.percepts.push_back(Percept {
            cursor: state.cursor,
            goal: state.true_goal().position,
        });
        while self.percepts.len() > cfg.reaction_delay + 1 {
            self.percepts.pop_front();
        }
        let seen = self.percepts[0];

        if seen.goal != self.planned_goal {
            let ws = env.workspace();
            self.planned_goal = seen.goal;
            self.planned_via_points =
                plan_route(seen.cursor, seen.goal, &state.obstacles, &ws, cfg.clearance, cfg.via_point_gain)
                    .unwrap_or_default();
            self.current_target_index = 0;
            self.begin_segment(seen.cursor, env, cfg);
        }

        if self.segment.step >= self.segment.duration
            && self.current_target_index < self.planned_via_points.len()
            && seen.cursor.distance(self.segment.to) <= cfg.via_reach_radius
        {
            self.current_target_index += 1;
            self.begin_segment(seen.cursor, env, cfg);
        }

        let seg = &mut self.segment;
        seg.step += 1;
        let frac = min_jerk(seg.step as f64 / seg.duration as f64);
        let reference = seg.from.lerp(seg.to, frac);
        let deterministic = (reference - seen.cursor).clamp_norm(env.v_max);

        let white = Vec2::new(
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
        );
        let rms = self.noise_rms(cfg);
        // Vector RMS of the filter output equals sqrt(2) * sigma * gain.
        let gain = ArFilter::gain(cfg.ar_coefficient);
        let sigma = if gain > 0.0 { rms / (gain * 2f64.sqrt()) } else { 0.0 };
        let noise = self.noise_memory.push(white * sigma);
        self.last_noise = noise;
        self.last_deterministic = deterministic;
        (deterministic + noise).clamp_norm(env.v_max)
    }
}

fn probe_checksum(rng: &ChaCha8Rng) -> u64 {
    let mut probe = rng.clone();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for _ in 0..32 {
        let x: f64 = StandardNormal.sample(&mut probe);
        h ^= x.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Via points that route the straight path from the cursor to `goal`
/// around blocking obstacles, each offset perpendicular from an obstacle
/// center by `(radius + clearance) * gain`.
pub fn plan_via_points(
    state: &EnvState,
    goal: &Goal,
    ws: &Workspace,
    clearance: f64,
    gain: f64,
) -> Result<Vec<Vec2>, PilotError> {
    let via = plan_route(state.cursor, goal.position, &state.obstacles, ws, clearance, gain)?;
    let mut polyline = vec![state.cursor];
    polyline.extend(&via);
    polyline.push(goal.position);
    if let Some(gap) = polyline_clearance_violation(&polyline, &state.obstacles, clearance) {
        return Err(PilotError::PlanningFailed(format!(
            "route passes {gap:.2} inside the clearance band"
        )));
    }
    Ok(via)
}

/// Largest shortfall below `clearance` along a polyline, if any.
pub fn polyline_clearance_violation(polyline: &[Vec2], obstacles: &[Obstacle], clearance: f64) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for w in polyline.windows(2) {
        for o in obstacles {
            let gap = point_segment_distance(o.position, w[0], w[1]) - o.radius;
            if gap < clearance - 1e-9 {
                let short = clearance - gap;
                worst = Some(worst.map_or(short, |s: f64| s.max(short)));
            }
        }
    }
    worst
}

/// Route planning without the final clearance audit. Near an endpoint the
/// clearance band of an obstacle shrinks so the endpoint stays outside it;
/// obstacles that contain an endpoint are skipped.
pub fn plan_route(
    from: Vec2,
    to: Vec2,
    obstacles: &[Obstacle],
    ws: &Workspace,
    clearance: f64,
    gain: f64,
) -> Result<Vec<Vec2>, PilotError> {
    let inflated: Vec<Obstacle> = obstacles
        .iter()
        .filter_map(|o| {
            let room = o.surface_distance(from).min(o.surface_distance(to));
            (room > 0.0).then(|| Obstacle {
                position: o.position,
                radius: o.radius + clearance.min(0.9 * room),
            })
        })
        .collect();
    let mut out = Vec::new();
    plan_segment(from, to, &inflated, ws, gain, 0, &mut out)?;
    Ok(out)
}

fn plan_segment(
    a: Vec2,
    b: Vec2,
    obstacles: &[Obstacle],
    ws: &Workspace,
    gain: f64,
    depth: usize,
    out: &mut Vec<Vec2>,
) -> Result<(), PilotError> {
    let Some(i) = segment_blocked(obstacles, a, b, 0.0) else {
        return Ok(());
    };
    if depth >= MAX_PLAN_DEPTH {
        return Err(PilotError::PlanningFailed(format!(
            "no clear route after {MAX_PLAN_DEPTH} refinements"
        )));
    }
    let o = obstacles[i];
    let Some(dir) = (b - a).normalized() else {
        return Ok(());
    };
    let offset = o.radius * gain;
    let sides = [o.position + dir.perp() * offset, o.position - dir.perp() * offset];
    let cost = |v: Vec2| a.distance(v) + v.distance(b);
    let center = ws.center();
    let (first, second) = {
        let (c0, c1) = (cost(sides[0]), cost(sides[1]));
        if (c0 - c1).abs() <= 1e-9 {
            if sides[0].distance(center) <= sides[1].distance(center) {
                (sides[0], sides[1])
            } else {
                (sides[1], sides[0])
            }
        } else if c0 < c1 {
            (sides[0], sides[1])
        } else {
            (sides[1], sides[0])
        }
    };
    let usable = |v: Vec2| ws.contains(v) && obstacles.iter().all(|o| o.surface_distance(v) >= 0.0);
    let via = [first, second]
        .into_iter()
        .find(|&v| usable(v))
        .ok_or_else(|| PilotError::PlanningFailed("no collision-free via point inside the workspace".into()))?;
    plan_segment(a, via, obstacles, ws, gain, depth + 1, out)?;
    out.push(via);
    plan_segment(via, b, obstacles, ws, gain, depth + 1, out)
}

/// One-sided Welch power spectral density with a Hann window and 50%
/// overlap, at unit sample rate. Returns `(frequencies, power)`.
pub fn welch_psd(signal: &[f64], segment_len: usize) -> (Vec<f64>, Vec<f64>) {
    use rustfft::num_complex::Complex;
    assert!(segment_len >= 4 && signal.len() >= segment_len, "signal shorter than one segment");
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / segment_len as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = rustfft::FftPlanner::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let hop = segment_len / 2;
    let mut start = 0;
    while start + segment_len <= signal.len() {
        let seg = &signal[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let freqs = (0..bins).map(|k| k as f64 / segment_len as f64).collect();
    let psd = power
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            one_sided * p / (segments as f64 * window_power)
        })
        .collect();
    (freqs, psd)
}

/// Least-squares slope of `ln psd` against `ln f` over `[lo, hi]`.
pub fn loglog_slope(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(psd)
        .filter(|(f, p)| **f >= lo && **f <= hi && **p > 0.0)
        .map(|(f, p)| (f.ln(), p.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean power in consecutive octave bands starting at `lo` and not
/// exceeding `hi`.
pub fn octave_band_means(freqs: &[f64], psd: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut a = lo;
    while a * 2.0 <= hi + 1e-12 {
        let vals: Vec<f64> = freqs
            .iter()
            .zip(psd)
            .filter(|(f, _)| **f >= a && **f < a * 2.0)
            .map(|(_, p)| *p)
            .collect();
        if !vals.is_empty() {
            out.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
        a *= 2.0;
    }
    out
}

/// Filtered unit-variance white noise, one axis, for spectral checks.
pub fn noise_stream(n: usize, coefficient: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = 0.0;
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            y = coefficient * y + (1.0 - coefficient) * x;
            y
        })
        .collect()
}

/// Outcome of one unassisted pilot rollout.
#[derive(Debug, Clone)]
pub struct PilotRollout {
    pub trajectory: CalibrationTrajectory,
    pub reached_goal: bool,
    pub steps: usize,
}

/// Runs the pilot alone (no assistance) from the environment start.
pub fn rollout_unassisted(env: &Environment, state: EnvState, cfg: &PilotConfig) -> Result<PilotRollout, PilotError> {
    let mut pilot = PilotState::new(&state, env.config(), cfg)?;
    let mut state = state;
    let mut steps = Vec::new();
    let reached = loop {
        let h = pilot.action(&state, env.config(), cfg);
        steps.push(CalibrationStep {
            position: state.cursor,
            input: h,
        });
        let (next, out) = env
            .step(&state, h, Vec2::ZERO, 0.0)
            .map_err(|e| PilotError::InvalidConfig(e.to_string()))?;
        state = next;
        if out.done {
            break out.success;
        }
    };
    let n = steps.len();
    Ok(PilotRollout {
        trajectory: CalibrationTrajectory {
            goal_label: state.true_goal_id,
            start: state.start,
            goals: state.goals.clone(),
            obstacles: state.obstacles.clone(),
            steps,
        },
        reached_goal: reached,
        steps: n,
    })
}

/// Stages used for labeled datasets; all have at least two goals.
pub const DATASET_STAGES: [u8; 3] = [3, 4, 5];

/// Labeled unassisted trajectories for belief calibration.
pub fn generate_dataset(
    env: &Environment,
    n_trajectories: usize,
    cfg: &PilotConfig,
    seed: u64,
) -> Result<Vec<PilotRollout>, PilotError> {
    (0..n_trajectories)
        .map(|i| {
            let stage = Stage::new(DATASET_STAGES[i % DATASET_STAGES.len()]).expect("valid stage");
            let env_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let state = env
                .generate(env_seed, stage)
                .map_err(|e| PilotError::PlanningFailed(e.to_string()))?;
            let pilot_cfg = PilotConfig {
                rng_seed: env_seed ^ 0x5eed_0f_9170,
                ..cfg.clone()
            };
            rollout_unassisted(env, state, &pilot_cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Goal};

    fn open_state() -> EnvState {
        EnvState {
            cursor: Vec2::new(100.0, 300.0),
            cursor_velocity: Vec2::ZERO,
            start: Vec2::new(100.0, 300.0),
            goals: vec![Goal {
                id: 0,
                position: Vec2::new(600.0, 300.0),
                radius: 20.0,
            }],
            obstacles: vec![],
            step_index: 0,
            true_goal_id: 0,
        }
    }

    #[test]
    fn min_jerk_endpoints() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unobstructed_route_is_empty() {
        let mut s = open_state();
        s.obstacles.push(Obstacle {
            position: Vec2::new(350.0, 500.0),
            radius: 30.0,
        });
        let ws = EnvConfig::default().workspace();
        assert!(plan_via_points(&s, &s.goals[0], &ws, 15.0, 1.3).unwrap().is_empty());
    }

    #[test]
    fn centered_obstacle_gets_one_perpendicular_via_point() {
        let mut s = open_state();
        // Segment runs along y = 300, the workspace center line, so both
        // sides are equidistant from the center; put the segment off-center.
        s.cursor = Vec2::new(100.0, 200.0);
        s.goals[0].position = Vec2::new(600.0, 200.0);
        s.obstacles.push(Obstacle {
            position: Vec2::new(350.0, 200.0),
            radius: 30.0,
        });
        let ws = EnvConfig::default().workspace();
        let via = plan_via_points(&s, &s.goals[0], &ws, 15.0, 1.3).unwrap();
        assert_eq!(via.len(), 1);
        let v = via[0];
        assert!((v.x - 350.0).abs() < 1e-9);
        // tie broken toward the workspace center (y = 300)
        assert!((v.y - (200.0 + 45.0 * 1.3)).abs() < 1e-9);
    }

    #[test]
    fn noiseless_action_points_at_goal() {
        let env = EnvConfig::default();
        let s = open_state();
        let cfg = PilotConfig::noiseless();
        let mut p = PilotState::new(&s, &env, &cfg).unwrap();
        let mut state = s.clone();
        for _ in 0..10 {
            let a = p.action(&state, &env, &cfg);
            assert!(a.y.abs() < 1e-12 && a.x > 0.0);
            state.cursor += a;
        }
    }

    #[test]
    fn noiseless_speed_vanishes_near_goal() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let cfg = PilotConfig::noiseless();
        let mut state = open_state();
        let mut p = PilotState::new(&state, env.config(), &cfg).unwrap();
        let mut speeds = Vec::new();
        for _ in 0..200 {
            let a = p.action(&state, env.config(), &cfg);
            speeds.push((state.cursor.distance(state.goals[0].position), a.norm()));
            let (next, out) = env.step(&state, a, Vec2::ZERO, 0.0).unwrap();
            state = next;
            if out.done {
                assert!(out.success);
                break;
            }
        }
        let peak = speeds.iter().map(|s| s.1).fold(0.0, f64::max);
        let (_, first) = speeds[0];
        let (_, last) = *speeds.last().unwrap();
        assert!(first < 0.2 * peak && last < 0.5 * peak, "bell profile: {first} {last} {peak}");
    }

    #[test]
    fn reaction_delay_shifts_response() {
        let env = EnvConfig::default();
        let cfg = |k| PilotConfig {
            reaction_delay: k,
            ..PilotConfig::noiseless()
        };
        let mut s = open_state();
        s.goals.push(Goal {
            id: 1,
            position: Vec2::new(100.0, 560.0),
            radius: 20.0,
        });
        for k in [0usize, 3] {
            let c = cfg(k);
            let mut p = PilotState::new(&s, &env, &c).unwrap();
            let mut state = s.clone();
            let mut switched_at = None;
            for t in 0..20 {
                if t == 5 {
                    state.true_goal_id = 1;
                }
                let before = p.planned_goal;
                let _ = p.action(&state, &env, &c);
                if switched_at.is_none() && p.planned_goal != before {
                    switched_at = Some(t);
                }
            }
            assert_eq!(switched_at, Some(5 + k));
        }
    }

    #[test]
    fn ar_filter_matches_recurrence() {
        let mut f = ArFilter::new(0.5);
        assert_eq!(f.push(Vec2::new(2.0, 0.0)), Vec2::new(1.0, 0.0));
        assert_eq!(f.push(Vec2::new(0.0, 4.0)), Vec2::new(0.5, 2.0));
    }

    #[test]
    fn rejects_out_of_range_config() {
        let cfg = PilotConfig {
            noise_amplitude: 0.2,
            ..PilotConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
