//! The per-connection tick loop, independent of any transport.

use crate::latency::TickTiming;
use crate::wire::{FrameIn, FrameOut, Handshake, TrialStatus, SCHEMA_VERSION};
use crate::SessionError;
use brace_core::belief::InferenceParams;
use brace_core::env::{EnvConfig, Environment};
use brace_core::episode::{Arbiter, BeliefInput, EpisodeContext, EpisodeRunner, EpisodeSpec};
use brace_core::eval::{episode_metrics, EpisodeMetrics};
use brace_core::expert::ExpertConfig;
use brace_core::geom::Vec2;
use brace_core::neural::PolicyNet;
use brace_core::pilot::PilotConfig;
use brace_core::reward::RewardWeights;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionCondition {
    NoAssist,
    ManualGamma,
    #[default]
    Brace,
}

impl SessionCondition {
    pub fn name(self) -> &'static str {
        match self {
            SessionCondition::NoAssist => "no_assist",
            SessionCondition::ManualGamma => "manual_gamma",
            SessionCondition::Brace => "brace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tick_rate: f64,
    pub env_seed: u64,
    pub stage: u8,
    pub condition: SessionCondition,
    pub checkpoint: Option<String>,
    pub participant: String,
    /// Seconds without a fresh input before assistance freezes.
    pub stale_after: f64,
    pub tail_len: usize,
    /// Step only when the client has answered the previous frame.
    pub lockstep: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate: 30.0,
            env_seed: 0,
            stage: 3,
            condition: SessionCondition::Brace,
            checkpoint: None,
            participant: "anonymous".into(),
            stale_after: 2.0,
            tail_len: 60,
            lockstep: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if !(10.0..=60.0).contains(&self.tick_rate) {
            return Err(SessionError::Config(format!("tick_rate {} outside [10, 60]", self.tick_rate)));
        }
        if !(1..=5).contains(&self.stage) {
            return Err(SessionError::Config(format!("stage {} outside 1..=5", self.stage)));
        }
        if !(self.stale_after > 0.0) {
            return Err(SessionError::Config("stale_after must be positive".into()));
        }
        Ok(())
    }

    pub fn tick_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.tick_rate)
    }

    pub fn spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            seed: self.env_seed,
            stage: self.stage,
        }
    }
}

/// Everything a session borrows: environment, expert, filter parameters and
/// the policy when the condition needs one.
pub struct SessionAssets {
    pub env: Environment,
    pub pilot: PilotConfig,
    pub expert: ExpertConfig,
    pub rewards: RewardWeights,
    pub params: InferenceParams,
    pub policy: Option<PolicyNet>,
}

impl SessionAssets {
    /// Evaluation defaults: a single contact ends the trial.
    pub fn new(params: InferenceParams, policy: Option<PolicyNet>) -> Result<Self, SessionError> {
        let env = Environment::new(EnvConfig {
            terminal_on_collision: true,
            ..EnvConfig::default()
        })
        .map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Self {
            env,
            pilot: PilotConfig::default(),
            expert: ExpertConfig::default(),
            rewards: RewardWeights::default(),
            params,
            policy,
        })
    }

    pub fn context(&self) -> EpisodeContext<'_> {
        EpisodeContext {
            env: &self.env,
            pilot: &self.pilot,
            expert: &self.expert,
            params: &self.params,
            rewards: &self.rewards,
        }
    }
}

/// Evaluation record plus session bookkeeping; readable as a plain
/// per-episode record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
    pub participant: String,
    pub aborted: bool,
    pub ticks: u64,
}

pub struct Session<'a> {
    cfg: &'a SessionConfig,
    runner: EpisodeRunner<'a>,
    policy: Option<&'a PolicyNet>,
    held: [f64; 2],
    manual_gamma: f64,
    tick: u64,
    tail: VecDeque<[f64; 3]>,
    aborted: bool,
    last_gamma: f64,
    timings: Vec<TickTiming>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a SessionConfig, ctx: &'a EpisodeContext<'a>, policy: Option<&'a PolicyNet>) -> Result<Self, SessionError> {
        cfg.validate()?;
        if cfg.condition == SessionCondition::Brace && policy.is_none() {
            return Err(SessionError::Config("brace condition needs a checkpoint".into()));
        }
        Ok(Self {
            runner: EpisodeRunner::new(ctx, cfg.spec())?,
            cfg,
            policy,
            held: [0.0; 2],
            manual_gamma: 0.0,
            tick: 0,
            tail: VecDeque::new(),
            aborted: false,
            last_gamma: 0.0,
            timings: Vec::new(),
        })
    }

    pub fn handshake(&self) -> Handshake {
        let env = self.runner_env();
        Handshake {
            schema_version: SCHEMA_VERSION,
            config: self.cfg.clone(),
            workspace: [env.width, env.height],
            v_max: env.v_max,
        }
    }

    fn runner_env(&self) -> &'a EnvConfig {
        self.runner.context().env.config()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn status(&self) -> TrialStatus {
        if self.aborted {
            return TrialStatus::Aborted;
        }
        let trace = self.runner.trace();
        if !self.runner.is_done() {
            TrialStatus::Running
        } else if trace.reached_true_goal {
            TrialStatus::Success
        } else if trace.collisions > 0 {
            TrialStatus::Collision
        } else if trace.timed_out {
            TrialStatus::Timeout
        } else {
            TrialStatus::WrongGoal
        }
    }

    /// Frame describing the current state.
    pub fn frame(&self, safety_stale: bool) -> FrameOut {
        let state = self.runner.state();
        let belief = self.runner.belief();
        let (goals, obstacles) = FrameOut::scene(state);
        FrameOut {
            tick: self.tick,
            cursor: [state.cursor.x, state.cursor.y],
            goals,
            obstacles,
            belief: belief.probs.clone(),
            gamma: self.last_gamma,
            map_goal_id: belief.map_goal_id,
            status: self.status(),
            tail: self.tail.iter().copied().collect(),
            safety_stale,
        }
    }

    /// One tick. `input` is the newest client message since the last tick,
    /// if any; otherwise the previous input is held. `stale` freezes
    /// assistance at zero.
    pub fn tick(&mut self, input: Option<FrameIn>, stale: bool) -> Result<FrameOut, SessionError> {
        if self.status().is_final() {
            return Ok(self.frame(stale));
        }
        if let Some(msg) = input.map(FrameIn::sanitized) {
            self.held = msg.input;
            if let Some(g) = msg.manual_gamma {
                self.manual_gamma = g;
            }
        }
        let v_max = self.runner_env().v_max;
        let h = Vec2::new(self.held[0] * v_max, self.held[1] * v_max);
        let mut arbiter = match (self.cfg.condition, stale) {
            (_, true) => Arbiter::Fixed(0.0),
            (SessionCondition::NoAssist, _) => Arbiter::NoAssist,
            (SessionCondition::ManualGamma, _) => Arbiter::Fixed(self.manual_gamma),
            (SessionCondition::Brace, _) => Arbiter::Policy {
                net: self.policy.expect("checked at construction"),
                input: BeliefInput::Full,
                explore: None,
            },
        };
        let cursor = self.runner.state().cursor;
        let gamma = self.runner.step(h, &mut arbiter)?.gamma;
        let t = self.runner.last_timing();
        self.timings.push(TickTiming {
            belief_us: t.belief.as_secs_f64() * 1e6,
            policy_us: t.policy.as_secs_f64() * 1e6,
            total_us: t.total.as_secs_f64() * 1e6,
        });
        self.last_gamma = gamma;
        self.tail.push_back([cursor.x, cursor.y, gamma]);
        while self.tail.len() > self.cfg.tail_len {
            self.tail.pop_front();
        }
        self.tick += 1;
        Ok(self.frame(stale))
    }

    /// Ends the trial early, keeping what was recorded so far.
    pub fn abort(&mut self) {
        if !self.runner.is_done() {
            self.aborted = true;
        }
    }

    pub fn timings(&self) -> &[TickTiming] {
        &self.timings
    }

    pub fn record(&self) -> SessionRecord {
        SessionRecord {
            metrics: episode_metrics(self.cfg.condition.name(), self.runner.trace(), self.runner_env()),
            participant: self.cfg.participant.clone(),
            aborted: self.aborted,
            ticks: self.tick,
        }
    }
}
