//! Joint training of the arbitration policy (clipped policy gradient) and,
//! optionally, the goal-inference parameters (REINFORCE), under a staged
//! curriculum.

pub mod belief_rl;
pub mod curriculum;
pub mod ppo;

pub use belief_rl::{belief_reinforce_update, belief_update_direction, BeliefEpisode, BeliefRlConfig, BeliefUpdateReport};
pub use curriculum::{default_curriculum, CurriculumStage, CurriculumTracker, Progress};
pub use ppo::{compute_gae, normalize, ppo_update, PpoConfig, PpoDiagnostics, Sample};

use crate::belief::{calibrate, BeliefError, InferenceParams};
use crate::env::{EnvConfig, EnvError, Environment};
use crate::episode::{run_episode, Arbiter, BeliefInput, EpisodeContext, EpisodeError, EpisodeSpec, EpisodeTrace};
use crate::expert::ExpertConfig;
use crate::neural::{Checkpoint, NeuralError, OptimState, PolicyNet, RngState};
use crate::pilot::{generate_dataset, PilotConfig, PilotError};
use crate::reward::{RewardTerms, RewardWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("trajectory has no transitions")]
    EmptyTrajectory,
    #[error("update batch of {0} transitions is too small")]
    BatchTooSmall(usize),
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("curriculum stalled in stage {stage} after {episodes} episodes (recent success {success_rate:.3})")]
    CurriculumStall { stage: u8, episodes: usize, success_rate: f64 },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Inference parameters stay at their calibrated values.
    BaselineFrozenBelief,
    /// Inference parameters are adapted alongside the policy.
    #[default]
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub belief_input: BeliefInput,
    pub curriculum: bool,
    /// Episode count when `curriculum` is off (stages drawn uniformly).
    pub episode_budget: usize,
    /// Calibration uses four labeled trajectories per warm-start episode,
    /// never fewer than the calibration minimum. Zero skips calibration.
    pub warm_start_episodes: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub alpha_anneal_episodes: usize,
    pub tau0: f64,
    pub tau_min: f64,
    /// Temperature cap multiplier applied at each stage advance.
    pub tau_decay: f64,
    pub ppo: PpoConfig,
    pub belief_rl: BeliefRlConfig,
    pub stages: Vec<CurriculumStage>,
    pub rewards: RewardWeights,
    pub env: EnvConfig,
    pub pilot: PilotConfig,
    pub expert: ExpertConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::EndToEnd,
            belief_input: BeliefInput::Full,
            curriculum: true,
            episode_budget: 2000,
            warm_start_episodes: 15,
            alpha_start: 0.0,
            alpha_end: 0.8,
            alpha_anneal_episodes: 720,
            tau0: 2.0,
            tau_min: 0.5,
            tau_decay: 0.7,
            ppo: PpoConfig::default(),
            belief_rl: BeliefRlConfig::default(),
            stages: default_curriculum(),
            rewards: RewardWeights::default(),
            env: EnvConfig::default(),
            pilot: PilotConfig::default(),
            expert: ExpertConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        self.ppo.validate().map_err(TrainError::Config)?;
        self.rewards.validate().map_err(TrainError::Config)?;
        self.env.validate()?;
        self.pilot.validate()?;
        self.expert.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if !self.curriculum && self.episode_budget == 0 {
            return bad("episode_budget must be positive without a curriculum");
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| !(1..=5).contains(&s.stage_id) || s.min_episodes == 0) {
            return bad("curriculum stages need ids in 1..=5 and positive minimums");
        }
        if !(0.0..=1.0).contains(&self.alpha_start) || !(0.0..=1.0).contains(&self.alpha_end) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.tau_min > 0.0 && self.tau0 >= self.tau_min && self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return bad("temperature schedule must satisfy 0 < tau_min <= tau0 and 0 < tau_decay <= 1");
        }
        if !(self.belief_rl.learning_rate >= 0.0 && self.belief_rl.c_confidence > 0.0 && self.belief_rl.c_clip > 0.0) {
            return bad("belief_rl rates must be positive");
        }
        Ok(())
    }

    pub fn alpha_at(&self, episode: usize) -> f64 {
        if self.alpha_anneal_episodes == 0 {
            return self.alpha_end;
        }
        let f = (episode as f64 / self.alpha_anneal_episodes as f64).min(1.0);
        self.alpha_start + f * (self.alpha_end - self.alpha_start)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub episode: usize,
    pub stage: u8,
    pub seed: u64,
    pub success: bool,
    pub collisions: usize,
    pub steps: usize,
    pub mean_gamma: f64,
    pub final_map_correct: bool,
    pub reward: RewardTerms,
    pub total_reward: f64,
    pub alpha: f64,
    /// `(beta, w_theta, w_d, temperature)` in use during the episode.
    pub phi: [f64; 4],
    pub ppo: Option<PpoDiagnostics>,
    pub belief: Option<BeliefUpdateReport>,
}

pub struct TrainOutcome {
    pub net: PolicyNet,
    pub optim: OptimState,
    pub params: InferenceParams,
    pub calibrated: InferenceParams,
    pub episodes: usize,
    /// Index of the last curriculum stage entered.
    pub final_stage: usize,
    pub log: Vec<TrainLogRecord>,
    /// Episode batches whose update produced a non-finite loss.
    pub quarantined: Vec<Vec<EpisodeSpec>>,
    pub rng: RngState,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, seed: u64) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            optim: Some(self.optim.clone()),
            rng: Some(self.rng.clone()),
            metadata: serde_json::json!({
                "seed": seed,
                "episodes": self.episodes,
                "belief_input": cfg.belief_input,
                "inference_params": self.params,
                "calibrated_params": self.calibrated,
                "config": cfg,
            }),
        }
    }
}

/// Distinct environment seed per training episode.
pub fn episode_seed(run_seed: u64, episode: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(episode as u64)
        .rotate_left(17)
        ^ 0x7a11_0000_0000_0000
}

/// Calibrated warm-start parameters.
pub fn warm_start(env: &Environment, cfg: &TrainConfig, seed: u64) -> Result<InferenceParams, TrainError> {
    if cfg.warm_start_episodes == 0 {
        return Ok(InferenceParams::default());
    }
    let n = (4 * cfg.warm_start_episodes).max(crate::belief::MIN_CALIBRATION_TRAJECTORIES);
    let data: Vec<_> = generate_dataset(env, n, &cfg.pilot, seed ^ 0xca11_b8a7e)?
        .into_iter()
        .map(|r| r.trajectory)
        .collect();
    Ok(calibrate(&data, &InferenceParams::default())?.params)
}

/// Turns a finished episode into update-ready samples and filter replay data.
fn collect(trace: &EpisodeTrace, cfg: &PpoConfig) -> Result<(Vec<Sample>, BeliefEpisode), TrainError> {
    let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward.total()).collect();
    let values: Vec<f64> = trace.steps.iter().map(|s| s.value * cfg.value_scale).collect();
    let mut dones = vec![false; rewards.len()];
    if let Some(d) = dones.last_mut() {
        *d = true;
    }
    let (adv, ret) = compute_gae(&rewards, &values, &dones, 0.0, cfg.discount, cfg.gae_lambda)?;
    let samples = trace
        .steps
        .iter()
        .zip(adv.iter().zip(&ret))
        .map(|(s, (&a, &r))| Sample {
            input: s.input.clone(),
            action: s.action,
            log_prob: s.log_prob,
            advantage: a,
            ret: r,
        })
        .collect();
    let ep = BeliefEpisode {
        goals: trace.goals.clone(),
        cursors: trace.steps.iter().map(|s| s.cursor).collect(),
        inputs: trace.steps.iter().map(|s| s.human).collect(),
        committed: trace.steps.iter().map(|s| s.map_goal).collect(),
        true_goal: trace.true_goal,
        advantages: adv,
    };
    Ok((samples, ep))
}

/// Trains from scratch. With `out` set, writes `train_log.ndjson`,
/// `checkpoint.brck` and, if any batch was quarantined, `quarantine.ndjson`.
pub fn run_training(cfg: &TrainConfig, seed: u64, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let env = Environment::new(cfg.env.clone())?;
    let calibrated = warm_start(&env, cfg, seed)?;
    let end_to_end = cfg.mode == TrainMode::EndToEnd;
    let mut params = calibrated;
    if end_to_end {
        params.temperature = cfg.tau0;
    }
    let mut net = PolicyNet::new(seed ^ 0x0b1a_5eed);
    let mut optim = OptimState::new(
        &net.param_slices_mut(),
        cfg.ppo.learning_rate,
        cfg.ppo.anneal_steps,
        Some(cfg.ppo.max_grad_norm),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = CurriculumTracker::new(cfg.stages.clone());
    let mut tau_cap = cfg.tau0;

    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("train_log.ndjson"))?))
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut quarantined = Vec::new();
    let mut samples: Vec<Sample> = Vec::new();
    let mut belief_batch: Vec<BeliefEpisode> = Vec::new();
    let mut batch_specs = Vec::new();

    let mut episode = 0usize;
    loop {
        let stage = if cfg.curriculum {
            tracker.stage().stage_id
        } else {
            rng.random_range(1..=5u8)
        };
        let spec = EpisodeSpec {
            seed: episode_seed(seed, episode),
            stage,
        };
        let alpha = cfg.alpha_at(episode);
        let phi = belief_rl::phi(&params);
        let trace = {
            let ctx = EpisodeContext {
                env: &env,
                pilot: &cfg.pilot,
                expert: &cfg.expert,
                params: &params,
                rewards: &cfg.rewards,
            };
            run_episode(
                &ctx,
                spec,
                Arbiter::Policy {
                    net: &net,
                    input: cfg.belief_input,
                    explore: Some(&mut rng),
                },
            )?
        };
        let (s, b) = collect(&trace, &cfg.ppo)?;
        samples.extend(s);
        belief_batch.push(b);
        batch_specs.push(spec);

        let mut ppo_diag = None;
        let mut belief_report = None;
        if samples.len() >= cfg.ppo.batch {
            let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
            normalize(&mut adv);
            samples.iter_mut().zip(&adv).for_each(|(s, a)| s.advantage = *a);
            let snapshot = (net.clone(), optim.clone());
            match ppo_update(&mut net, &mut optim, &samples, &cfg.ppo, &mut rng) {
                Ok(d) if net.is_finite() => ppo_diag = Some(d),
                Ok(_) | Err(TrainError::NonFiniteLoss) => {
                    (net, optim) = snapshot;
                    log::warn!("non-finite update at episode {episode}; batch quarantined");
                    quarantined.push(std::mem::take(&mut batch_specs));
                }
                Err(e) => return Err(e),
            }
            if end_to_end && ppo_diag.is_some() {
                let mut offset = 0;
                for ep in &mut belief_batch {
                    let n = ep.advantages.len();
                    ep.advantages.copy_from_slice(&adv[offset..offset + n]);
                    offset += n;
                }
                let upper = params.temperature.min(tau_cap).max(cfg.tau_min);
                let (next, report) =
                    belief_reinforce_update(&belief_batch, &params, alpha, (cfg.tau_min, upper), &cfg.belief_rl);
                if report.clamped > 0 {
                    log::warn!("belief parameters clamped {} time(s) at episode {episode}", report.clamped);
                }
                params = next;
                belief_report = Some(report);
            }
            samples.clear();
            belief_batch.clear();
            batch_specs.clear();
        }

        let record = TrainLogRecord {
            episode,
            stage,
            seed: spec.seed,
            success: trace.success(),
            collisions: trace.collisions,
            steps: trace.steps.len(),
            mean_gamma: trace.steps.iter().map(|s| s.gamma).sum::<f64>() / trace.steps.len().max(1) as f64,
            final_map_correct: trace.steps.last().is_some_and(|s| s.map_goal == trace.true_goal),
            reward: trace.steps.iter().fold(RewardTerms::default(), |mut acc, s| {
                acc.add(&s.reward);
                acc
            }),
            total_reward: trace.total_reward(),
            alpha,
            phi,
            ppo: ppo_diag,
            belief: belief_report,
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
        }
        log.push(record);
        episode += 1;

        if cfg.curriculum {
            match tracker.record(trace.success(), trace.collisions > 0) {
                Progress::Stay => {}
                Progress::Advance => {
                    tau_cap = (tau_cap * cfg.tau_decay).max(cfg.tau_min);
                    if end_to_end {
                        params.temperature = params.temperature.min(tau_cap);
                    }
                    log::info!("advanced to stage {} after {episode} episodes", tracker.stage().stage_id);
                }
                Progress::Finished => break,
                Progress::Stalled => {
                    if let Some(f) = log_file.as_mut() {
                        f.flush()?;
                    }
                    return Err(TrainError::CurriculumStall {
                        stage: tracker.stage().stage_id,
                        episodes: tracker.episodes_in_stage(),
                        success_rate: tracker.window_success(),
                    });
                }
            }
        } else if episode >= cfg.episode_budget {
            break;
        }
    }

    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let outcome = TrainOutcome {
        net,
        optim,
        params,
        calibrated,
        episodes: episode,
        final_stage: tracker.stage_index(),
        log,
        quarantined,
        rng: RngState::capture(&rng),
    };
    if let Some(dir) = out {
        outcome.checkpoint(cfg, seed).save(&dir.join("checkpoint.brck"))?;
        if !outcome.quarantined.is_empty() {
            let mut f = BufWriter::new(File::create(dir.join("quarantine.ndjson"))?);
            for batch in &outcome.quarantined {
                serde_json::to_writer(&mut f, batch)?;
                f.write_all(b"\n")?;
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_schedule_is_linear_then_flat() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.alpha_at(0), 0.0);
        assert!((cfg.alpha_at(360) - 0.4).abs() < 1e-12);
        assert_eq!(cfg.alpha_at(720), 0.8);
        assert_eq!(cfg.alpha_at(5000), 0.8);
    }

    #[test]
    fn toml_round_trip_and_rejection() {
        let cfg = TrainConfig::from_toml_str("mode = \"baseline_frozen_belief\"\n[ppo]\nclip = 0.1\n").unwrap();
        assert_eq!(cfg.mode, TrainMode::BaselineFrozenBelief);
        assert_eq!(cfg.ppo.clip, 0.1);
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("[ppo]\nclip = 2.0").is_err());
    }
}
