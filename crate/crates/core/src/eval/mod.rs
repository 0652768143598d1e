//! Evaluation harness: per-episode metrics, paired condition suites,
//! uncertainty banding, degraded-expert comparison and reward ablation.

pub mod plot;

use crate::belief::InferenceParams;
use crate::env::{EnvConfig, EnvError, Environment};
use crate::episode::{run_episode, Arbiter, BeliefInput, EpisodeContext, EpisodeError, EpisodeSpec, EpisodeTrace};
use crate::expert::{ExpertConfig, ExpertMode};
use crate::neural::PolicyNet;
use crate::pilot::PilotConfig;
use crate::reward::RewardWeights;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fixed gamma {0} is outside [0, 1]")]
    FixedGammaRange(f64),
    #[error("pilot noise streams differ between conditions on seed {seed}")]
    StreamMismatch { seed: u64 },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub pilot: PilotConfig,
    pub expert: ExpertConfig,
    pub rewards: RewardWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig {
                terminal_on_collision: true,
                ..EnvConfig::default()
            },
            pilot: PilotConfig::default(),
            expert: ExpertConfig::default(),
            rewards: RewardWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ConditionKind {
    NoAssist,
    FixedGamma(f64),
    ExpertOnly,
    Policy { net: Arc<PolicyNet>, input: BeliefInput },
}

/// One arm of a paired comparison.
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: String,
    pub kind: ConditionKind,
    pub params: InferenceParams,
    /// Replaces the suite's expert when set.
    pub expert: Option<ExpertConfig>,
}

impl Condition {
    pub fn no_assist() -> Self {
        Self::plain("no_assist", ConditionKind::NoAssist)
    }

    pub fn fixed_gamma(gamma: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(EvalError::FixedGammaRange(gamma));
        }
        Ok(Self::plain(&format!("fixed_gamma({gamma})"), ConditionKind::FixedGamma(gamma)))
    }

    pub fn expert_only(mode: ExpertMode) -> Self {
        let mut c = Self::plain(&format!("expert_{}", mode.name()), ConditionKind::ExpertOnly);
        c.expert = Some(ExpertConfig { mode, ..ExpertConfig::default() });
        c
    }

    pub fn brace(net: Arc<PolicyNet>, params: InferenceParams) -> Self {
        Self::policy("brace", net, BeliefInput::Full, params)
    }

    pub fn uniform_prior(net: Arc<PolicyNet>, params: InferenceParams) -> Self {
        Self::policy("uniform_prior", net, BeliefInput::Uniform, params)
    }

    /// Policy fed a one-hot belief on the MAP goal (lowest index on ties).
    pub fn map_sequential(net: Arc<PolicyNet>, params: InferenceParams) -> Self {
        Self::policy("map_sequential", net, BeliefInput::MapOneHot, params)
    }

    pub fn policy(name: &str, net: Arc<PolicyNet>, input: BeliefInput, params: InferenceParams) -> Self {
        Self {
            name: name.to_string(),
            kind: ConditionKind::Policy { net, input },
            params,
            expert: None,
        }
    }

    pub fn with_expert(mut self, expert: ExpertConfig) -> Self {
        self.expert = Some(expert);
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn plain(name: &str, kind: ConditionKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            params: InferenceParams::default(),
            expert: None,
        }
    }

    fn arbiter(&self) -> Arbiter<'_> {
        match &self.kind {
            ConditionKind::NoAssist => Arbiter::NoAssist,
            ConditionKind::FixedGamma(g) => Arbiter::Fixed(*g),
            ConditionKind::ExpertOnly => Arbiter::ExpertOnly,
            ConditionKind::Policy { net, input } => Arbiter::Policy {
                net,
                input: *input,
                explore: None,
            },
        }
    }
}

/// Path fractions at which belief accuracy is sampled.
pub const ACCURACY_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub condition: String,
    pub seed: u64,
    pub stage: u8,
    pub n_goals: usize,
    pub success: bool,
    pub collision_count: usize,
    pub steps_to_complete: usize,
    pub path_length: f64,
    /// Successes only: straight-line displacement over realized path length.
    pub path_efficiency: Option<f64>,
    /// Successes only, bits per step.
    pub throughput: Option<f64>,
    pub mean_gamma: f64,
    pub mean_gamma_by_quartile: [f64; 4],
    /// Sum and count of gamma over steps with an obstacle within the safety distance.
    pub near_gamma: (f64, usize),
    pub far_gamma: (f64, usize),
    pub belief_accuracy_at: [bool; 3],
    pub first_quartile_entropy: f64,
    pub pilot_stream: u64,
}

/// Steps counted toward completion time; failures count as the full horizon.
pub fn censored_steps(m: &EpisodeMetrics, max_steps: usize) -> usize {
    if m.success {
        m.steps_to_complete
    } else {
        max_steps
    }
}

pub fn quartile_of(t: usize, n: usize) -> usize {
    (4 * t / n.max(1)).min(3)
}

pub fn episode_metrics(condition: &str, trace: &EpisodeTrace, env: &EnvConfig) -> EpisodeMetrics {
    let n = trace.steps.len();
    let goal = trace.goals[trace.true_goal].position;
    let path_length = trace.path_length();
    let success = trace.success();
    let path_efficiency = (success && path_length > 0.0).then(|| trace.start.distance(trace.final_cursor) / path_length);
    let throughput = success.then(|| {
        let id = (trace.start.distance(goal) / (2.0 * env.success_radius) + 1.0).log2();
        id / n as f64
    });

    let mut q_sum = [0.0; 4];
    let mut q_n = [0usize; 4];
    let mut near = (0.0, 0);
    let mut far = (0.0, 0);
    let mut ent = (0.0, 0);
    for (t, s) in trace.steps.iter().enumerate() {
        let q = quartile_of(t, n);
        q_sum[q] += s.gamma;
        q_n[q] += 1;
        if s.nearest_obstacle < env.d_safe {
            near.0 += s.gamma;
            near.1 += 1;
        } else {
            far.0 += s.gamma;
            far.1 += 1;
        }
        if q == 0 {
            ent.0 += s.entropy;
            ent.1 += 1;
        }
    }
    let mut quartiles = [0.0; 4];
    for q in 0..4 {
        quartiles[q] = if q_n[q] > 0 { q_sum[q] / q_n[q] as f64 } else { f64::NAN };
    }

    let mut accuracy = [false; 3];
    let mut travelled = 0.0;
    let mut k = 0;
    for (t, s) in trace.steps.iter().enumerate() {
        let next = trace.steps.get(t + 1).map_or(trace.final_cursor, |x| x.cursor);
        travelled += s.cursor.distance(next);
        while k < 3 && travelled > ACCURACY_FRACTIONS[k] * path_length {
            accuracy[k] = s.map_goal == trace.true_goal;
            k += 1;
        }
    }

    EpisodeMetrics {
        condition: condition.to_string(),
        seed: trace.spec.seed,
        stage: trace.spec.stage,
        n_goals: trace.goals.len(),
        success,
        collision_count: trace.collisions,
        steps_to_complete: n,
        path_length,
        path_efficiency,
        throughput,
        mean_gamma: trace.steps.iter().map(|s| s.gamma).sum::<f64>() / n.max(1) as f64,
        mean_gamma_by_quartile: quartiles,
        near_gamma: near,
        far_gamma: far,
        belief_accuracy_at: accuracy,
        first_quartile_entropy: if ent.1 > 0 { ent.0 / ent.1 as f64 } else { 0.0 },
        pilot_stream: trace.pilot_stream,
    }
}

/// `n` specs cycling through `stages`, seeds counting up from `base_seed`.
pub fn suite_specs(base_seed: u64, n: usize, stages: &[u8]) -> Vec<EpisodeSpec> {
    (0..n)
        .map(|i| EpisodeSpec {
            seed: base_seed + i as u64,
            stage: stages[i % stages.len()],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub episodes: usize,
    pub success_rate: MeanSd,
    pub collision_rate: f64,
    /// Completion steps with failures counted as the full horizon.
    pub completion_steps: MeanSd,
    pub path_efficiency: MeanSd,
    pub throughput: MeanSd,
    pub mean_gamma: MeanSd,
    pub gamma_by_quartile: [f64; 4],
    pub belief_accuracy_at: [f64; 3],
}

pub fn summarize(condition: &str, records: &[EpisodeMetrics], max_steps: usize) -> ConditionSummary {
    let rows: Vec<&EpisodeMetrics> = records.iter().filter(|r| r.condition == condition).collect();
    let n = rows.len().max(1) as f64;
    let mut quartiles = [0.0; 4];
    let mut acc = [0.0; 3];
    for q in 0..4 {
        quartiles[q] = MeanSd::of(rows.iter().map(|r| r.mean_gamma_by_quartile[q]).filter(|v| v.is_finite())).mean;
    }
    for k in 0..3 {
        acc[k] = rows.iter().filter(|r| r.belief_accuracy_at[k]).count() as f64 / n;
    }
    ConditionSummary {
        condition: condition.to_string(),
        episodes: rows.len(),
        success_rate: MeanSd::of(rows.iter().map(|r| r.success as u8 as f64)),
        collision_rate: rows.iter().filter(|r| r.collision_count > 0).count() as f64 / n,
        completion_steps: MeanSd::of(rows.iter().map(|r| censored_steps(r, max_steps) as f64)),
        path_efficiency: MeanSd::of(rows.iter().filter_map(|r| r.path_efficiency)),
        throughput: MeanSd::of(rows.iter().filter_map(|r| r.throughput)),
        mean_gamma: MeanSd::of(rows.iter().map(|r| r.mean_gamma)),
        gamma_by_quartile: quartiles,
        belief_accuracy_at: acc,
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub records: Vec<EpisodeMetrics>,
    pub summaries: Vec<ConditionSummary>,
    /// Full traces, kept only when requested.
    pub traces: Vec<(String, EpisodeTrace)>,
}

impl SuiteResult {
    pub fn summary(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.condition == condition)
    }

    pub fn records_for<'a>(&'a self, condition: &'a str) -> impl Iterator<Item = &'a EpisodeMetrics> + 'a {
        self.records.iter().filter(move |r| r.condition == condition)
    }

    /// Newline-delimited per-episode records.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Comma-separated aggregate table, one row per condition.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        writeln!(
            out,
            "condition,episodes,success_mean,success_sd,collision_rate,steps_mean,steps_sd,path_eff_mean,path_eff_sd,throughput_mean,throughput_sd,gamma_mean,gamma_sd,gamma_q1,gamma_q2,gamma_q3,gamma_q4,acc25,acc50,acc75"
        )?;
        for s in &self.summaries {
            let q = s.gamma_by_quartile;
            let a = s.belief_accuracy_at;
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.2},{:.2},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                s.condition,
                s.episodes,
                s.success_rate.mean,
                s.success_rate.sd,
                s.collision_rate,
                s.completion_steps.mean,
                s.completion_steps.sd,
                s.path_efficiency.mean,
                s.path_efficiency.sd,
                s.throughput.mean,
                s.throughput.sd,
                s.mean_gamma.mean,
                s.mean_gamma.sd,
                q[0],
                q[1],
                q[2],
                q[3],
                a[0],
                a[1],
                a[2]
            )?;
        }
        Ok(())
    }
}

/// Runs every condition on every spec. Conditions see identical pilot noise
/// streams, which is checked per seed.
pub fn run_suite(
    cfg: &EvalConfig,
    conditions: &[Condition],
    specs: &[EpisodeSpec],
    keep_traces: bool,
) -> Result<SuiteResult, EvalError> {
    let env = Environment::new(cfg.env.clone())?;
    let mut records = Vec::with_capacity(conditions.len() * specs.len());
    let mut traces = Vec::new();
    for spec in specs {
        let mut stream = None;
        for cond in conditions {
            let ctx = EpisodeContext {
                env: &env,
                pilot: &cfg.pilot,
                expert: cond.expert.as_ref().unwrap_or(&cfg.expert),
                params: &cond.params,
                rewards: &cfg.rewards,
            };
            let trace = run_episode(&ctx, *spec, cond.arbiter())?;
            match stream {
                None => stream = Some(trace.pilot_stream),
                Some(s) if s != trace.pilot_stream => return Err(EvalError::StreamMismatch { seed: spec.seed }),
                Some(_) => {}
            }
            records.push(episode_metrics(&cond.name, &trace, &cfg.env));
            if keep_traces {
                traces.push((cond.name.clone(), trace));
            }
        }
    }
    let summaries = conditions
        .iter()
        .map(|c| summarize(&c.name, &records, cfg.env.max_steps))
        .collect();
    Ok(SuiteResult {
        records,
        summaries,
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyBand {
    Low,
    Medium,
    High,
}

impl EntropyBand {
    pub const ALL: [EntropyBand; 3] = [EntropyBand::Low, EntropyBand::Medium, EntropyBand::High];

    /// `< 0.5` nats is low, `(1.0, inf)` high, the closed interval between medium.
    pub fn classify(entropy: f64) -> Self {
        if entropy < 0.5 {
            EntropyBand::Low
        } else if entropy <= 1.0 {
            EntropyBand::Medium
        } else {
            EntropyBand::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: EntropyBand,
    pub episodes: usize,
    pub multi_target: usize,
    pub candidate_steps: f64,
    pub baseline_steps: f64,
    /// `(baseline - candidate) / baseline`; `None` when the band is empty.
    pub relative_improvement: Option<f64>,
    pub note: Option<String>,
}

/// Pairs episodes of `candidate` and `baseline` by seed, bands them by the
/// pair's mean first-quartile entropy and compares completion steps.
pub fn stratify_by_uncertainty(
    records: &[EpisodeMetrics],
    candidate: &str,
    baseline: &str,
    max_steps: usize,
) -> Vec<BandRow> {
    let base: std::collections::HashMap<u64, &EpisodeMetrics> =
        records.iter().filter(|r| r.condition == baseline).map(|r| (r.seed, r)).collect();
    let pairs: Vec<(&EpisodeMetrics, &EpisodeMetrics)> = records
        .iter()
        .filter(|r| r.condition == candidate)
        .filter_map(|c| base.get(&c.seed).map(|b| (c, *b)))
        .collect();
    EntropyBand::ALL
        .iter()
        .map(|&band| {
            let rows: Vec<_> = pairs
                .iter()
                .filter(|(c, b)| EntropyBand::classify(0.5 * (c.first_quartile_entropy + b.first_quartile_entropy)) == band)
                .collect();
            if rows.is_empty() {
                return BandRow {
                    band,
                    episodes: 0,
                    multi_target: 0,
                    candidate_steps: f64::NAN,
                    baseline_steps: f64::NAN,
                    relative_improvement: None,
                    note: Some("insufficient data".into()),
                };
            }
            let n = rows.len() as f64;
            let c = rows.iter().map(|(c, _)| censored_steps(c, max_steps) as f64).sum::<f64>() / n;
            let b = rows.iter().map(|(_, b)| censored_steps(b, max_steps) as f64).sum::<f64>() / n;
            BandRow {
                band,
                episodes: rows.len(),
                multi_target: rows.iter().filter(|(c, _)| c.n_goals > 1).count(),
                candidate_steps: c,
                baseline_steps: b,
                relative_improvement: Some((b - c) / b),
                note: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedRow {
    pub mode: ExpertMode,
    pub expert_success: f64,
    pub brace_success: f64,
    /// BRACE minus expert-alone success rate.
    pub delta: f64,
}

/// Expert alone versus the policy arbitrating with that expert, per mode.
pub fn degraded_expert_suite(
    cfg: &EvalConfig,
    policy: &Condition,
    modes: &[ExpertMode],
    specs: &[EpisodeSpec],
) -> Result<Vec<DegradedRow>, EvalError> {
    modes
        .iter()
        .map(|&mode| {
            let expert = ExpertConfig { mode, ..cfg.expert.clone() };
            let conditions = [
                Condition::expert_only(mode).with_expert(expert.clone()),
                policy.clone().with_expert(expert).renamed("brace"),
            ];
            let res = run_suite(cfg, &conditions, specs, false)?;
            let e = res.summaries[0].success_rate.mean;
            let b = res.summaries[1].success_rate.mean;
            Ok(DegradedRow {
                mode,
                expert_success: e,
                brace_success: b,
                delta: b - e,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Zeroed weight, or `"none"` for the full reward.
    pub zeroed: String,
    pub success_rate: f64,
    pub mean_gamma: f64,
    pub collisions: usize,
    pub curve: Vec<plot::CurvePoint>,
}

/// Trains one policy per zeroed reward weight (plus the full reward) on a
/// fixed episode budget and evaluates each on the same paired suite.
pub fn reward_ablation(
    base: &crate::train::TrainConfig,
    seed: u64,
    terms: &[&str],
    eval: &EvalConfig,
    specs: &[EpisodeSpec],
) -> Result<Vec<AblationRow>, crate::train::TrainError> {
    let mut variants = vec![("none".to_string(), base.rewards)];
    for t in terms {
        let w = base
            .rewards
            .without(t)
            .ok_or_else(|| crate::train::TrainError::Config(format!("unknown reward term {t}")))?;
        variants.push((t.to_string(), w));
    }
    variants
        .into_iter()
        .map(|(name, rewards)| {
            let cfg = crate::train::TrainConfig {
                rewards,
                curriculum: false,
                ..base.clone()
            };
            let out = crate::train::run_training(&cfg, seed, None)?;
            let cond = Condition::brace(Arc::new(out.net), out.params);
            let res = run_suite(eval, &[cond], specs, false).map_err(|e| crate::train::TrainError::Config(e.to_string()))?;
            let s = &res.summaries[0];
            Ok(AblationRow {
                zeroed: name,
                success_rate: s.success_rate.mean,
                mean_gamma: s.mean_gamma.mean,
                collisions: res.records.iter().map(|r| r.collision_count).sum(),
                curve: plot::learning_curve(&out.log, 50),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_boundaries() {
        assert_eq!(EntropyBand::classify(0.4999), EntropyBand::Low);
        assert_eq!(EntropyBand::classify(0.5), EntropyBand::Medium);
        assert_eq!(EntropyBand::classify(1.0), EntropyBand::Medium);
        assert_eq!(EntropyBand::classify(1.0001), EntropyBand::High);
    }

    #[test]
    fn fixed_gamma_range() {
        assert!(Condition::fixed_gamma(1.2).is_err());
        assert!(Condition::fixed_gamma(0.0).is_ok());
    }

    #[test]
    fn quartiles_cover_all_steps() {
        let counts = (0..10).fold([0; 4], |mut c, t| {
            c[quartile_of(t, 10)] += 1;
            c
        });
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert!(counts.iter().all(|&c| c >= 2));
    }

    #[test]
    fn mean_sd_of_known_values() {
        let m = MeanSd::of([1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.sd, m.n), (2.0, 1.0, 3));
        assert!(MeanSd::of([]).mean.is_nan());
    }
}
