use crate::manifest::RunManifest;
use crate::{CalibrateArgs, CliError, EvalArgs, GenDataArgs, PlotArgs, ServeArgs, TrainArgs, VerifyArgs};
use brace_core::belief::{calibrate as fit, read_dataset, write_dataset, InferenceParams};
use brace_core::env::{EnvConfig, Environment};
use brace_core::episode::BeliefInput;
use brace_core::eval::plot::{gamma_heatmap, gamma_trajectory, learning_curve};
use brace_core::eval::{run_suite, suite_specs, Condition, EvalConfig};
use brace_core::expert::ExpertMode;
use brace_core::neural::{Checkpoint, PolicyNet};
use brace_core::pilot::{generate_dataset, PilotConfig};
use brace_core::theory::{monotonicity_suite, verify_regret_dominance};
use brace_core::train::{run_training, TrainConfig, TrainLogRecord};
use brace_session::{SessionAssets, SessionConfig, ServerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

const IDENTITY_TOLERANCE: f64 = 1e-9;

fn config_error(path: Option<&Path>, line: usize, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string()),
        line,
        message: message.into(),
    }
}

/// Parses an optional TOML file; defaults apply when no path is given.
/// Returns the config and the raw text that goes into the manifest hash.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, String), CliError> {
    let Some(path) = path else {
        return Ok((T::default(), String::new()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_error(Some(path), 0, e.to_string()))?;
    match toml::from_str(&text) {
        Ok(cfg) => Ok((cfg, text)),
        Err(e) => {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Err(config_error(Some(path), line, e.message().trim()))
        }
    }
}

fn args(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse '{s}'"))))
        .collect()
}

pub struct LoadedPolicy {
    pub net: Arc<PolicyNet>,
    pub params: InferenceParams,
    pub input: BeliefInput,
}

/// Reads a training checkpoint and the inference parameters stored with it.
pub fn load_policy(path: &Path) -> Result<LoadedPolicy, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let params = match ckpt.metadata.get("inference_params") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => InferenceParams::default(),
    };
    let input = match ckpt.metadata.get("belief_input") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => BeliefInput::Full,
    };
    Ok(LoadedPolicy {
        net: Arc::new(ckpt.net),
        params,
        input,
    })
}

fn parse_condition(name: &str, policy: Option<&LoadedPolicy>) -> Result<Condition, CliError> {
    if let Some(g) = name.strip_prefix("fixed_gamma:") {
        let g: f64 = g
            .parse()
            .map_err(|_| CliError::Usage(format!("bad fixed_gamma value '{g}'")))?;
        return Ok(Condition::fixed_gamma(g)?);
    }
    if let Some(mode) = name.strip_prefix("expert_") {
        return ExpertMode::ALL
            .iter()
            .find(|m| m.name() == mode)
            .map(|m| Condition::expert_only(*m))
            .ok_or_else(|| CliError::Usage(format!("unknown expert mode '{mode}'")));
    }
    if name == "no_assist" {
        return Ok(Condition::no_assist());
    }
    let p = policy.ok_or_else(|| CliError::Usage(format!("condition '{name}' needs --checkpoint")))?;
    match name {
        "brace" => Ok(Condition::brace(p.net.clone(), p.params)),
        "uniform_prior" => Ok(Condition::uniform_prior(p.net.clone(), p.params)),
        "map_sequential" => Ok(Condition::map_sequential(p.net.clone(), p.params)),
        "policy" => Ok(Condition::policy("policy", p.net.clone(), p.input, p.params)),
        _ => Err(CliError::Usage(format!("unknown condition '{name}'"))),
    }
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let (cfg, text): (TrainConfig, _) = load_config(a.config.as_deref())?;
    cfg.validate()
        .map_err(|e| config_error(a.config.as_deref(), 0, e.to_string()))?;
    RunManifest::new("train", a.config.as_deref(), &text, Some(a.seed), &a.out, vec![]).write(&a.out)?;
    let outcome = run_training(&cfg, a.seed, Some(&a.out))?;
    let recent = &outcome.log[outcome.log.len().saturating_sub(100)..];
    let success = recent.iter().filter(|r| r.success).count() as f64 / recent.len().max(1) as f64;
    println!(
        "episodes={} final_stage={} recent_success={:.3} quarantined={}",
        outcome.episodes,
        cfg.stages[outcome.final_stage].stage_id,
        success,
        outcome.quarantined.len()
    );
    Ok(())
}

fn validate_eval(cfg: &EvalConfig, path: Option<&Path>) -> Result<(), CliError> {
    let bad = |m: String| config_error(path, 0, m);
    cfg.env.validate().map_err(|e| bad(e.to_string()))?;
    cfg.pilot.validate().map_err(|e| bad(e.to_string()))?;
    cfg.expert.validate().map_err(|e| bad(e.to_string()))?;
    cfg.rewards.validate().map_err(bad)?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (cfg, text): (EvalConfig, _) = load_config(a.config.as_deref())?;
    validate_eval(&cfg, a.config.as_deref())?;
    let stages: Vec<u8> = parse_list("stages", &a.stages)?;
    if stages.is_empty() || a.episodes == 0 {
        return Err(CliError::Usage("need at least one stage and one episode".into()));
    }
    let policy = a.checkpoint.as_deref().map(load_policy).transpose()?;
    let conditions = a
        .conditions
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|c| parse_condition(c, policy.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let checkpoint_hash = match &a.checkpoint {
        Some(p) => crate::manifest::content_hash(&std::fs::read(p)?),
        None => String::new(),
    };
    let manifest = RunManifest::new(
        "eval",
        a.config.as_deref(),
        &text,
        Some(a.seeds),
        &a.out,
        args(&[
            ("checkpoint_hash", checkpoint_hash),
            ("conditions", a.conditions.clone()),
            ("episodes", a.episodes.to_string()),
            ("stages", a.stages.clone()),
        ]),
    );
    manifest.write(&a.out)?;
    let specs = suite_specs(a.seeds, a.episodes, &stages);
    let result = run_suite(&cfg, &conditions, &specs, false)?;
    let mut table = create(&a.out.join("summary.csv"))?;
    result.write_table(&mut table)?;
    table.flush()?;
    let mut records = create(&a.out.join("episodes.ndjson"))?;
    result.write_records(&mut records)?;
    records.flush()?;
    for s in &result.summaries {
        println!(
            "{} success={:.4} steps={:.2} path_eff={:.4} gamma={:.4}",
            s.condition, s.success_rate.mean, s.completion_steps.mean, s.path_efficiency.mean, s.mean_gamma.mean
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TheoryReport<'a> {
    seed: u64,
    dominance: &'a brace_core::theory::DominanceReport,
    monotonicity: &'a [brace_core::theory::MonotonicityReport],
}

pub fn verify_theorems(a: &VerifyArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new(
        "verify-theorems",
        None,
        "",
        Some(a.seed),
        &a.out,
        args(&[("samples", a.samples.to_string()), ("families", a.families.to_string())]),
    );
    manifest.write(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let dominance = verify_regret_dominance(a.samples, &mut rng)?;
    let mono = monotonicity_suite(a.families, &mut rng)?;

    let report = TheoryReport {
        seed: a.seed,
        dominance: &dominance,
        monotonicity: &mono,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(a.out.join("theory_report.json"), text)?;

    let mut lam = String::from("family_index,family,asserted,lambda,entropy,gamma\n");
    let mut con = String::from("family_index,family,asserted,scale,gamma\n");
    for (i, r) in mono.iter().enumerate() {
        for row in &r.lambda_sweep {
            writeln!(lam, "{i},{},{},{},{},{}", r.family, r.asserted, row.lambda, row.entropy, row.gamma).ok();
        }
        for row in &r.constraint_sweep {
            writeln!(con, "{i},{},{},{},{}", r.family, r.asserted, row.scale, row.gamma).ok();
        }
    }
    std::fs::write(a.out.join("lambda_sweep.csv"), lam)?;
    std::fs::write(a.out.join("constraint_sweep.csv"), con)?;
    let mut dom = String::from("goals,gamma_map,gamma_integrated,regret_map,regret_integrated,gap,dispersion,identity_error\n");
    for r in &dominance.rows {
        writeln!(
            dom,
            "{},{},{},{},{},{},{},{}",
            r.goals,
            r.gamma_map,
            r.gamma_integrated,
            r.regret_map,
            r.regret_integrated,
            r.gap(),
            r.dispersion,
            r.identity_error.map_or_else(String::new, |e| e.to_string())
        )
        .ok();
    }
    std::fs::write(a.out.join("dominance.csv"), dom)?;

    let asserted = mono.iter().filter(|r| r.asserted).count();
    let violated: Vec<_> = mono.iter().filter(|r| r.asserted && !r.violations.is_empty()).collect();
    println!(
        "dominance samples={} violations={} max_identity_error={:.3e}; monotonicity families={} asserted={} violated={}",
        dominance.samples,
        dominance.dominance_violations,
        dominance.max_identity_error,
        mono.len(),
        asserted,
        violated.len()
    );
    if dominance.dominance_violations > 0 || dominance.max_identity_error > IDENTITY_TOLERANCE {
        return Err(CliError::Verification(format!(
            "regret dominance failed: {} violations, identity error {:.3e}",
            dominance.dominance_violations, dominance.max_identity_error
        )));
    }
    if let Some(r) = violated.first() {
        return Err(CliError::Verification(format!(
            "monotonicity failed for {} ({} violations): {}",
            r.family,
            r.violations.len(),
            r.violations[0]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataConfig {
    env: EnvConfig,
    pilot: PilotConfig,
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let (cfg, text): (GenDataConfig, _) = load_config(a.config.as_deref())?;
    let bad = |m: String| config_error(a.config.as_deref(), 0, m);
    cfg.env.validate().map_err(|e| bad(e.to_string()))?;
    cfg.pilot.validate().map_err(|e| bad(e.to_string()))?;
    RunManifest::new(
        "gen-data",
        a.config.as_deref(),
        &text,
        Some(a.seed),
        &a.out,
        args(&[("trajectories", a.trajectories.to_string())]),
    )
    .write(&a.out)?;
    let env = Environment::new(cfg.env)?;
    let data: Vec<_> = generate_dataset(&env, a.trajectories, &cfg.pilot, a.seed)?
        .into_iter()
        .map(|r| r.trajectory)
        .collect();
    let mut out = create(&a.out.join("dataset.ndjson"))?;
    write_dataset(&mut out, &data)?;
    out.flush()?;
    let steps: usize = data.iter().map(|t| t.steps.len()).sum();
    println!("trajectories={} steps={}", data.len(), steps);
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.data)?;
    let text = String::from_utf8_lossy(&bytes);
    RunManifest::new("calibrate", Some(&a.data), &text, None, &a.out, vec![]).write(&a.out)?;
    let data = read_dataset(bytes.as_slice())?;
    let report = fit(&data, &InferenceParams::default())?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(a.out.join("calibration.json"), json)?;
    println!(
        "beta={:.4} w_theta={:.4} temperature={:.4} validation_log_likelihood={:.4}",
        report.params.beta, report.params.w_theta, report.params.temperature, report.validation_log_likelihood
    );
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let (cfg, text): (SessionConfig, _) = load_config(a.config.as_deref())?;
    cfg.validate()
        .map_err(|e| config_error(a.config.as_deref(), 0, e.to_string()))?;
    RunManifest::new(
        "serve",
        a.config.as_deref(),
        &text,
        Some(cfg.env_seed),
        &a.out,
        args(&[("addr", a.addr.clone())]),
    )
    .write(&a.out)?;
    let (params, policy) = match &cfg.checkpoint {
        Some(p) => {
            let loaded = load_policy(Path::new(p))?;
            (loaded.params, Some((*loaded.net).clone()))
        }
        None => (InferenceParams::default(), None),
    };
    let assets = SessionAssets::new(params, policy)?;
    let state = ServerState::new(cfg, assets, Some(a.out.join("records.ndjson")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        println!("listening on ws://{}/session", listener.local_addr()?);
        brace_session::serve(listener, state).await
    })?;
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>, CliError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn plotdata(a: &PlotArgs) -> Result<(), CliError> {
    if a.log.is_none() && a.checkpoint.is_none() {
        return Err(CliError::Usage("plotdata needs --log, --checkpoint or both".into()));
    }
    if !(a.cell > 0.0) {
        return Err(CliError::Usage("--cell must be positive".into()));
    }
    let mut hashed = String::new();
    for p in [&a.log, &a.checkpoint].into_iter().flatten() {
        writeln!(hashed, "{}", crate::manifest::content_hash(&std::fs::read(p)?)).ok();
    }
    RunManifest::new(
        "plotdata",
        None,
        &hashed,
        Some(a.seed),
        &a.out,
        args(&[
            ("window", a.window.to_string()),
            ("episodes", a.episodes.to_string()),
            ("stage", a.stage.to_string()),
            ("cell", a.cell.to_string()),
        ]),
    )
    .write(&a.out)?;

    if let Some(log) = &a.log {
        let records = read_log(log)?;
        let mut csv = String::from("episode,stage,success_rate,mean_gamma,mean_reward\n");
        for p in learning_curve(&records, a.window) {
            writeln!(csv, "{},{},{},{},{}", p.episode, p.stage, p.success_rate, p.mean_gamma, p.mean_reward).ok();
        }
        std::fs::write(a.out.join("learning_curve.csv"), csv)?;
    }

    if let Some(ckpt) = &a.checkpoint {
        let policy = load_policy(ckpt)?;
        let cfg = EvalConfig::default();
        let cond = Condition::policy("brace", policy.net.clone(), policy.input, policy.params);
        let specs = suite_specs(a.seed, a.episodes.max(1), &[a.stage]);
        let result = run_suite(&cfg, &[cond], &specs, true)?;
        let traces: Vec<_> = result.traces.iter().map(|(_, t)| t).collect();
        let heat = gamma_heatmap(traces.iter().copied(), &cfg.env, a.cell);
        let mut csv = String::from("ix,iy,x,y,count,mean_gamma\n");
        for iy in 0..heat.ny {
            for ix in 0..heat.nx {
                let k = iy * heat.nx + ix;
                let g = heat.mean_gamma[k].map_or_else(String::new, |g| g.to_string());
                let (x, y) = ((ix as f64 + 0.5) * heat.cell, (iy as f64 + 0.5) * heat.cell);
                writeln!(csv, "{ix},{iy},{x},{y},{},{g}", heat.counts[k]).ok();
            }
        }
        std::fs::write(a.out.join("gamma_heatmap.csv"), csv)?;
        let mut csv = String::from("episode,t,x,y,gamma,p_max,entropy\n");
        for (e, trace) in traces.iter().enumerate() {
            for p in gamma_trajectory(trace) {
                writeln!(csv, "{e},{},{},{},{},{},{}", p.t, p.x, p.y, p.gamma, p.p_max, p.entropy).ok();
            }
        }
        std::fs::write(a.out.join("gamma_trajectories.csv"), csv)?;
    }
    Ok(())
}
