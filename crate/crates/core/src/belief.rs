//! Recursive goal inference under a noisy-rational input model.

use crate::env::{EnvState, Goal, Obstacle};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Lower bound of the optimal-magnitude ramp as a fraction of `v_max`.
pub const EPS_MAG: f64 = 0.1;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("degenerate direction")]
    DegenerateDirection,
    #[error("insufficient calibration data: {found} trajectories, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },
    #[error("belief has {found} entries but the state has {expected} goals")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("calibration dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration dataset line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceParams {
    pub beta: f64,
    pub w_theta: f64,
    pub w_d: f64,
    pub ema_decay: f64,
    pub temperature: f64,
    /// Distance at which the optimal input magnitude saturates at `v_max`.
    pub d_slow: f64,
    pub v_max: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            beta: 10.0,
            w_theta: 0.7,
            w_d: 0.3,
            ema_decay: 0.85,
            temperature: 1.0,
            d_slow: 150.0,
            v_max: 10.0,
        }
    }
}

impl InferenceParams {
    /// Rescales the two cost weights so they sum to one.
    pub fn renormalized(mut self) -> Self {
        let w_theta = self.w_theta.max(0.0);
        let w_d = self.w_d.max(0.0);
        let total = w_theta + w_d;
        if total > 0.0 {
            self.w_theta = w_theta / total;
            self.w_d = w_d / total;
        } else {
            self.w_theta = 0.5;
            self.w_d = 0.5;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub probs: Vec<f64>,
    /// Accumulated unsmoothed log-likelihoods, shifted so the maximum is 0.
    pub raw_log_scores: Vec<f64>,
    pub entropy: f64,
    pub p_max: f64,
    pub map_goal_id: usize,
    /// Set when the last update was skipped because every cost was non-finite.
    pub warning: bool,
}

impl BeliefState {
    pub fn uniform(n_goals: usize) -> Self {
        assert!(n_goals > 0, "belief needs at least one goal");
        Self::from_probs(vec![1.0 / n_goals as f64; n_goals], vec![0.0; n_goals])
    }

    /// Starts from an arbitrary prior, which also seeds the log scores.
    pub fn from_prior(prior: &[f64]) -> Self {
        let total: f64 = prior.iter().sum();
        let probs: Vec<f64> = prior.iter().map(|p| p / total).collect();
        let raw = shift_to_zero(probs.iter().map(|p| p.ln()).collect());
        Self::from_probs(probs, raw)
    }

    /// One-hot belief on `goal`.
    pub fn one_hot(n_goals: usize, goal: usize) -> Self {
        let mut probs = vec![0.0; n_goals];
        probs[goal] = 1.0;
        let raw = probs.iter().map(|&p| if p > 0.0 { 0.0 } else { f64::NEG_INFINITY }).collect();
        Self::from_probs(probs, raw)
    }

    fn from_probs(probs: Vec<f64>, raw_log_scores: Vec<f64>) -> Self {
        let (p_max, map_goal_id) = argmax(&probs);
        Self {
            entropy: entropy(&probs),
            p_max,
            map_goal_id,
            probs,
            raw_log_scores,
            warning: false,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Largest entry and its lowest index.
pub fn argmax(values: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &v) in values.iter().enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

fn shift_to_zero(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        v.iter_mut().for_each(|x| *x -= m);
    }
    v
}

/// Softmax of `scores / temperature`.
pub fn tempered_softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - m) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Absolute angle between `h` and the direction from `from` to `goal`.
pub fn angular_deviation(h: Vec2, from: Vec2, goal: Vec2) -> Result<f64, BeliefError> {
    let to_goal = goal - from;
    if h.norm() == 0.0 || to_goal.norm() == 0.0 {
        return Err(BeliefError::DegenerateDirection);
    }
    Ok(h.cross(to_goal).abs().atan2(h.dot(to_goal)))
}

/// Optimal input magnitude at distance `d` from the goal.
pub fn optimal_magnitude(d: f64, params: &InferenceParams) -> f64 {
    params.v_max * (d / params.d_slow).clamp(EPS_MAG, 1.0)
}

pub fn distance_deviation(h: Vec2, from: Vec2, goal: Vec2, params: &InferenceParams) -> f64 {
    let h_opt = optimal_magnitude(from.distance(goal), params);
    (1.0 - h.norm() / h_opt).abs()
}

/// Weighted angular and magnitude deviation. A zero input counts as
/// orthogonal to every goal.
pub fn input_cost(h: Vec2, from: Vec2, goal: Vec2, params: &InferenceParams) -> f64 {
    let theta = angular_deviation(h, from, goal).unwrap_or(FRAC_PI_2);
    params.w_theta * theta + params.w_d * distance_deviation(h, from, goal, params)
}

pub fn update_belief(
    prev: &BeliefState,
    state: &EnvState,
    h: Vec2,
    params: &InferenceParams,
) -> Result<BeliefState, BeliefError> {
    update_with_goals(prev, &state.goals, state.cursor, h, params)
}

/// Same as [`update_belief`] given the goal list and cursor directly.
pub fn update_with_goals(
    prev: &BeliefState,
    goals: &[Goal],
    cursor: Vec2,
    h: Vec2,
    params: &InferenceParams,
) -> Result<BeliefState, BeliefError> {
    if prev.len() != goals.len() {
        return Err(BeliefError::DimensionMismatch {
            expected: goals.len(),
            found: prev.len(),
        });
    }
    let costs: Vec<f64> = goals.iter().map(|g| input_cost(h, cursor, g.position, params)).collect();
    if costs.iter().all(|c| !c.is_finite()) {
        let mut same = prev.clone();
        same.warning = true;
        return Ok(same);
    }
    let raw = shift_to_zero(
        prev.raw_log_scores
            .iter()
            .zip(&costs)
            .map(|(s, c)| if c.is_finite() { s - params.beta * c } else { *s })
            .collect(),
    );
    let posterior = tempered_softmax(&raw, params.temperature);
    let a = params.ema_decay;
    let mixed: Vec<f64> = prev
        .probs
        .iter()
        .zip(&posterior)
        .map(|(p, q)| (a * p + (1.0 - a) * q).max(0.0))
        .collect();
    let z: f64 = mixed.iter().sum();
    let probs = mixed.into_iter().map(|p| p / z).collect();
    Ok(BeliefState::from_probs(probs, raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub position: Vec2,
    pub input: Vec2,
}

/// One labeled trajectory in the calibration dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrajectory {
    pub goal_label: usize,
    pub start: Vec2,
    pub goals: Vec<Goal>,
    pub obstacles: Vec<Obstacle>,
    pub steps: Vec<CalibrationStep>,
}

/// Writes one JSON record per line.
pub fn write_dataset<W: Write>(mut out: W, data: &[CalibrationTrajectory]) -> Result<(), BeliefError> {
    for t in data {
        serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<CalibrationTrajectory>, BeliefError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| BeliefError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub const MIN_CALIBRATION_TRAJECTORIES: usize = 50;
pub const COMPLETION_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
const BETA_GRID: [f64; 5] = [1.0, 2.0, 5.0, 10.0, 20.0];
const W_THETA_GRID: [f64; 4] = [0.5, 0.6, 0.7, 0.8];
const LOG_FLOOR: f64 = -13.815_510_557_964_274; // ln 1e-6

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: InferenceParams,
    /// Mean per-step log-probability of the labeled goal on the training split.
    pub train_log_likelihood: f64,
    pub validation_log_likelihood: f64,
    /// `(fraction, accuracy)` of the MAP goal on the validation split.
    pub accuracy_at: Vec<(f64, f64)>,
    pub grid_evaluations: usize,
}

/// Mean per-step log-probability of the labeled goal.
pub fn mean_log_likelihood(data: &[&CalibrationTrajectory], params: &InferenceParams) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in data {
        let mut b = BeliefState::uniform(t.goals.len());
        for s in &t.steps {
            b = update_with_goals(&b, &t.goals, s.position, s.input, params).expect("goal count matches");
            total += b.probs[t.goal_label].ln().max(LOG_FLOOR);
            n += 1;
        }
    }
    if n == 0 {
        LOG_FLOOR
    } else {
        total / n as f64
    }
}

/// Fraction of trajectories whose MAP goal is correct after the given
/// fraction of their steps.
pub fn accuracy_at_completion(data: &[&CalibrationTrajectory], params: &InferenceParams, fraction: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|t| {
            let upto = ((t.steps.len() as f64 * fraction).ceil() as usize).clamp(1, t.steps.len().max(1));
            let mut b = BeliefState::uniform(t.goals.len());
            for s in t.steps.iter().take(upto) {
                b = update_with_goals(&b, &t.goals, s.position, s.input, params).expect("goal count matches");
            }
            b.map_goal_id == t.goal_label
        })
        .count();
    correct as f64 / data.len() as f64
}

/// Grid search over `(beta, w_theta)`, coordinate-descent refinement, then
/// a temperature fit on a held-out split.
pub fn calibrate(data: &[CalibrationTrajectory], base: &InferenceParams) -> Result<CalibrationReport, BeliefError> {
    if data.len() < MIN_CALIBRATION_TRAJECTORIES {
        return Err(BeliefError::InsufficientData {
            found: data.len(),
            needed: MIN_CALIBRATION_TRAJECTORIES,
        });
    }
    let (train, valid): (Vec<_>, Vec<_>) = data.iter().enumerate().partition(|(i, _)| i % 5 != 4);
    let train: Vec<&CalibrationTrajectory> = train.into_iter().map(|(_, t)| t).collect();
    let valid: Vec<&CalibrationTrajectory> = valid.into_iter().map(|(_, t)| t).collect();

    let with = |beta: f64, w_theta: f64| InferenceParams {
        beta,
        w_theta,
        w_d: 1.0 - w_theta,
        temperature: 1.0,
        ..*base
    };
    let mut evals = 0usize;
    let mut best = (f64::NEG_INFINITY, with(base.beta, base.w_theta));
    for &beta in &BETA_GRID {
        for &w in &W_THETA_GRID {
            let p = with(beta, w);
            let ll = mean_log_likelihood(&train, &p);
            evals += 1;
            if ll > best.0 {
                best = (ll, p);
            }
        }
    }

    let (mut step_beta, mut step_w) = (1.5f64, 0.05f64);
    while step_beta > 1.02 || step_w > 0.005 {
        let cur = best.1;
        let candidates = [
            with(cur.beta * step_beta, cur.w_theta),
            with(cur.beta / step_beta, cur.w_theta),
            with(cur.beta, (cur.w_theta + step_w).min(1.0)),
            with(cur.beta, (cur.w_theta - step_w).max(0.0)),
        ];
        let mut improved = false;
        for p in candidates {
            let ll = mean_log_likelihood(&train, &p);
            evals += 1;
            if ll > best.0 + 1e-12 {
                best = (ll, p);
                improved = true;
            }
        }
        if !improved {
            step_beta = step_beta.sqrt();
            step_w /= 2.0;
        }
    }

    let fitted = best.1;
    let temperature = golden_section_max(0.25, 4.0, 40, |tau| {
        mean_log_likelihood(&valid, &InferenceParams { temperature: tau, ..fitted })
    });
    let params = InferenceParams { temperature, ..fitted };
    let accuracy_at = COMPLETION_FRACTIONS
        .iter()
        .map(|&f| (f, accuracy_at_completion(&valid, &params, f)))
        .collect();
    Ok(CalibrationReport {
        train_log_likelihood: mean_log_likelihood(&train, &params),
        validation_log_likelihood: mean_log_likelihood(&valid, &params),
        params,
        accuracy_at,
        grid_evaluations: evals,
    })
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_section_max(mut lo: f64, mut hi: f64, iterations: usize, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}
