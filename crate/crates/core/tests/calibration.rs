use brace_core::belief::{accuracy_at_completion, calibrate, InferenceParams};
use brace_core::env::{EnvConfig, Environment, Stage};
use brace_core::pilot::{generate_dataset, rollout_unassisted, PilotConfig};

fn dataset(pilot: &PilotConfig, n: usize, seed: u64) -> Vec<brace_core::belief::CalibrationTrajectory> {
    let env = Environment::new(EnvConfig::default()).unwrap();
    generate_dataset(&env, n, pilot, seed)
        .unwrap()
        .into_iter()
        .map(|r| r.trajectory)
        .collect()
}

#[test]
fn noiseless_inputs_identify_the_goal_by_three_quarters() {
    // Obstacles removed: detours around them can point at a neighbouring goal.
    let env = Environment::new(EnvConfig::default()).unwrap();
    let pilot = PilotConfig::noiseless();
    let data: Vec<_> = (0..60u64)
        .map(|seed| {
            let mut state = env.generate(seed, Stage::new(3 + (seed % 3) as u8).unwrap()).unwrap();
            state.obstacles.clear();
            rollout_unassisted(&env, state, &pilot).unwrap().trajectory
        })
        .collect();
    let refs: Vec<_> = data.iter().collect();
    assert_eq!(accuracy_at_completion(&refs, &InferenceParams::default(), 0.75), 1.0);
}

#[test]
fn calibrated_accuracy_grows_with_path_completion() {
    let data = dataset(&PilotConfig::default(), 120, 22);
    let report = calibrate(&data, &InferenceParams::default()).unwrap();
    let refs: Vec<_> = data.iter().collect();
    let early = accuracy_at_completion(&refs, &report.params, 0.25);
    let late = accuracy_at_completion(&refs, &report.params, 0.75);
    assert!(late >= early, "{early} -> {late}");
    assert!(report.validation_log_likelihood > (1.0f64 / 3.0).ln());
}
