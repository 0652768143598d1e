//! One closed-loop episode: simulated pilot, belief filter, arbitration and
//! blended execution. Training and every evaluation condition share this loop.

use crate::belief::{update_belief, BeliefError, BeliefState, InferenceParams};
use crate::env::{EnvError, EnvState, Environment, Goal, Stage};
use crate::expert::{expert_action, ExpertConfig, ExpertMemory};
use crate::geom::Vec2;
use crate::neural::{policy_input, squash, NeuralError, PolicyNet, INPUT_DIM};
use crate::pilot::{PilotConfig, PilotError, PilotState};
use crate::reward::{step_reward, RewardContext, RewardTerms, RewardWeights};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// What the policy sees in the belief slots of its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefInput {
    /// The filtered posterior and its entropy.
    #[default]
    Full,
    /// Always uniform over the goals present.
    Uniform,
    /// One-hot on the MAP goal, entropy 0.
    MapOneHot,
}

impl BeliefInput {
    pub fn name(self) -> &'static str {
        match self {
            BeliefInput::Full => "full",
            BeliefInput::Uniform => "uniform",
            BeliefInput::MapOneHot => "map_one_hot",
        }
    }

    /// Belief vector and entropy presented to the policy.
    pub fn present(self, belief: &BeliefState) -> (Vec<f64>, f64) {
        let n = belief.len();
        match self {
            BeliefInput::Full => (belief.probs.clone(), belief.entropy),
            BeliefInput::Uniform => (vec![1.0 / n as f64; n], (n as f64).ln()),
            BeliefInput::MapOneHot => (BeliefState::one_hot(n, belief.map_goal_id).probs, 0.0),
        }
    }
}

/// Source of the blending weight.
pub enum Arbiter<'a> {
    /// Pure pilot control; the expert is not consulted.
    NoAssist,
    Fixed(f64),
    /// Expert alone, conditioned on the true goal.
    ExpertOnly,
    Policy {
        net: &'a PolicyNet,
        input: BeliefInput,
        /// Samples exploratory blends when present; otherwise `squash(mu)`.
        explore: Option<&'a mut ChaCha8Rng>,
    },
}

/// Fixed per-episode setup; everything stochastic derives from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub seed: u64,
    pub stage: u8,
}

impl EpisodeSpec {
    pub fn pilot_seed(&self) -> u64 {
        self.seed ^ 0x9170_7a11_5eed_0001
    }

    pub fn expert_seed(&self) -> u64 {
        self.seed ^ 0x0e4b_e127_5eed_0002
    }
}

pub struct EpisodeContext<'a> {
    pub env: &'a Environment,
    pub pilot: &'a PilotConfig,
    pub expert: &'a ExpertConfig,
    pub params: &'a InferenceParams,
    pub rewards: &'a RewardWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Cursor before the step.
    pub cursor: Vec2,
    pub human: Vec2,
    pub expert: Vec2,
    pub gamma: f64,
    /// Pre-squash action and its log-probability under the sampling policy.
    pub action: f64,
    pub log_prob: f64,
    pub value: f64,
    pub input: Vec<f64>,
    /// Filtered posterior after observing `human`.
    pub belief: Vec<f64>,
    pub entropy: f64,
    pub map_goal: usize,
    pub reward: RewardTerms,
    pub collision: bool,
    pub nearest_obstacle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub spec: EpisodeSpec,
    pub start: Vec2,
    pub goals: Vec<Goal>,
    pub true_goal: usize,
    pub steps: Vec<StepTrace>,
    pub final_cursor: Vec2,
    pub reached_true_goal: bool,
    pub collisions: usize,
    pub timed_out: bool,
    pub pilot_stream: u64,
}

impl EpisodeTrace {
    /// Reached the true goal without touching any obstacle.
    pub fn success(&self) -> bool {
        self.reached_true_goal && self.collisions == 0
    }

    pub fn path_length(&self) -> f64 {
        let mut total = 0.0;
        let mut prev = self.start;
        for s in self.steps.iter().skip(1) {
            total += prev.distance(s.cursor);
            prev = s.cursor;
        }
        total + prev.distance(self.final_cursor)
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total()).sum()
    }
}

pub fn generate(ctx: &EpisodeContext, spec: EpisodeSpec) -> Result<EnvState, EpisodeError> {
    Ok(ctx.env.generate(spec.seed, Stage::new(spec.stage)?)?)
}

/// Wall-clock cost of the last step, split by component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTiming {
    pub belief: Duration,
    pub policy: Duration,
    pub expert: Duration,
    pub total: Duration,
}

/// Steps one episode from externally supplied pilot inputs.
pub struct EpisodeRunner<'a> {
    ctx: &'a EpisodeContext<'a>,
    expert_cfg: ExpertConfig,
    memory: ExpertMemory,
    state: EnvState,
    belief: BeliefState,
    trace: EpisodeTrace,
    done: bool,
    timing: StepTiming,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(ctx: &'a EpisodeContext<'a>, spec: EpisodeSpec) -> Result<Self, EpisodeError> {
        let state = generate(ctx, spec)?;
        let expert_cfg = ExpertConfig {
            seed: spec.expert_seed(),
            ..ctx.expert.clone()
        };
        Ok(Self {
            memory: ExpertMemory::new(&expert_cfg),
            expert_cfg,
            belief: BeliefState::uniform(state.goals.len()),
            trace: EpisodeTrace {
                spec,
                start: state.start,
                goals: state.goals.clone(),
                true_goal: state.true_goal_id,
                steps: Vec::new(),
                final_cursor: state.cursor,
                reached_true_goal: false,
                collisions: 0,
                timed_out: false,
                pilot_stream: 0,
            },
            state,
            ctx,
            done: false,
            timing: StepTiming::default(),
        })
    }

    pub fn context(&self) -> &'a EpisodeContext<'a> {
        self.ctx
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn last_timing(&self) -> StepTiming {
        self.timing
    }

    /// Advances one step given the pilot's input `h`. Calling after the
    /// episode ended returns the last step unchanged.
    pub fn step(&mut self, h: Vec2, arbiter: &mut Arbiter) -> Result<&StepTrace, EpisodeError> {
        if self.done {
            return Ok(self.trace.steps.last().expect("a finished episode has steps"));
        }
        let ctx = self.ctx;
        let env_cfg = ctx.env.config();
        let state = &self.state;
        let started = Instant::now();
        self.belief = update_belief(&self.belief, state, h, ctx.params)?;
        let belief_done = Instant::now();
        let belief = &self.belief;
        let map_goal = state.goals[belief.map_goal_id];
        let obs = ctx.env.observation_padded(state, h);

        let (gamma, action, log_prob, value, input) = match arbiter {
            Arbiter::NoAssist => (0.0, f64::NAN, 0.0, 0.0, Vec::new()),
            Arbiter::Fixed(g) => (*g, f64::NAN, 0.0, 0.0, Vec::new()),
            Arbiter::ExpertOnly => (1.0, f64::NAN, 0.0, 0.0, Vec::new()),
            Arbiter::Policy { net, input, explore } => {
                let (probs, ent) = input.present(belief);
                let x: [f64; INPUT_DIM] = policy_input(&obs, &probs, ent);
                let (mu, value) = net.forward_mu(&x)?;
                match explore {
                    Some(rng) => {
                        let (u, g, lp) = net.sample(mu, &mut **rng);
                        (g, u, lp, value, x.to_vec())
                    }
                    None => (squash(mu), mu, 0.0, value, x.to_vec()),
                }
            }
        };
        let policy_done = Instant::now();
        let expert = match arbiter {
            Arbiter::NoAssist => Vec2::ZERO,
            Arbiter::ExpertOnly => expert_action(state, state.true_goal(), &self.expert_cfg, &mut self.memory, env_cfg),
            _ => expert_action(state, &map_goal, &self.expert_cfg, &mut self.memory, env_cfg),
        };
        let expert_done = Instant::now();
        let nearest_obstacle = state.nearest_obstacle_distance_at(state.cursor);
        let (next, out) = ctx.env.step(state, h, expert, gamma)?;
        let reward = step_reward(
            &RewardContext {
                collision: out.collision,
                gamma,
                p_max: belief.p_max,
                map_goal_distance: next.cursor.distance(map_goal.position),
                progress: out.distance_delta_to_true_goal / ctx.rewards.progress_unit,
                p_true: belief.probs[state.true_goal_id],
            },
            ctx.rewards,
        );
        self.trace.steps.push(StepTrace {
            cursor: state.cursor,
            human: h,
            expert,
            gamma,
            action,
            log_prob,
            value,
            input,
            belief: belief.probs.clone(),
            entropy: belief.entropy,
            map_goal: belief.map_goal_id,
            reward,
            collision: out.collision,
            nearest_obstacle,
        });
        self.trace.collisions += out.collision as usize;
        self.state = next;
        self.trace.final_cursor = self.state.cursor;
        if out.done {
            self.trace.reached_true_goal = out.success;
            self.trace.timed_out = out.timed_out;
            self.done = true;
        }
        self.timing = StepTiming {
            belief: belief_done - started,
            policy: policy_done - belief_done,
            expert: expert_done - policy_done,
            total: started.elapsed(),
        };
        Ok(self.trace.steps.last().expect("just pushed"))
    }

    pub fn finish(self) -> EpisodeTrace {
        self.trace
    }
}

/// Runs one episode to termination with the simulated pilot.
pub fn run_episode(ctx: &EpisodeContext, spec: EpisodeSpec, mut arbiter: Arbiter) -> Result<EpisodeTrace, EpisodeError> {
    let pilot_cfg = PilotConfig {
        rng_seed: spec.pilot_seed(),
        ..ctx.pilot.clone()
    };
    let mut runner = EpisodeRunner::new(ctx, spec)?;
    let mut pilot = PilotState::new(runner.state(), ctx.env.config(), &pilot_cfg)?;
    runner.trace.pilot_stream = pilot.stream_probe();
    while !runner.is_done() {
        let h = pilot.action(runner.state(), ctx.env.config(), &pilot_cfg);
        runner.step(h, &mut arbiter)?;
    }
    Ok(runner.finish())
}

/// Runs one episode from a recorded input stream, holding the last input
/// if the stream ends early.
pub fn run_scripted(
    ctx: &EpisodeContext,
    spec: EpisodeSpec,
    mut arbiter: Arbiter,
    inputs: &[Vec2],
) -> Result<EpisodeTrace, EpisodeError> {
    let mut runner = EpisodeRunner::new(ctx, spec)?;
    let mut last = Vec2::ZERO;
    let mut t = 0;
    while !runner.is_done() {
        if let Some(h) = inputs.get(t) {
            last = *h;
        }
        runner.step(last, &mut arbiter)?;
        t += 1;
    }
    Ok(runner.finish())
}
