use brace_core::eval::{run_suite, suite_specs, Condition, EvalConfig};
use brace_core::expert::ExpertMode;

#[test]
fn full_expert_alone_solves_stage_two() {
    let specs = suite_specs(500, 100, &[2]);
    let res = run_suite(&EvalConfig::default(), &[Condition::expert_only(ExpertMode::Full)], &specs, false).unwrap();
    assert_eq!(res.summaries[0].success_rate.mean, 1.0);
}

#[test]
fn degraded_modes_lose_success_in_order() {
    let specs = suite_specs(500, 100, &[2, 3, 4, 5]);
    let conds: Vec<_> = ExpertMode::ALL.iter().map(|m| Condition::expert_only(*m)).collect();
    let res = run_suite(&EvalConfig::default(), &conds, &specs, false).unwrap();
    let rates: Vec<f64> = res.summaries.iter().map(|s| s.success_rate.mean).collect();
    assert_eq!(rates[0], 1.0, "{rates:?}");
    assert!(rates.windows(2).all(|w| w[0] > w[1]), "{rates:?}");
}
