use brace_core::eval::{run_suite, stratify_by_uncertainty, suite_specs, Condition, EntropyBand, EvalConfig};

#[test]
fn fixed_gamma_zero_reproduces_no_assist() {
    let specs = suite_specs(600, 40, &[2, 3, 4, 5]);
    let conds = [Condition::no_assist(), Condition::fixed_gamma(0.0).unwrap()];
    let res = run_suite(&EvalConfig::default(), &conds, &specs, true).unwrap();
    for pair in res.traces.chunks(2) {
        let (a, b) = (&pair[0].1, &pair[1].1);
        assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.cursor, y.cursor);
            assert_eq!(x.gamma, 0.0);
            assert_eq!(y.gamma, 0.0);
        }
    }
    let (n, f) = (&res.summaries[0], &res.summaries[1]);
    assert_eq!(n.success_rate, f.success_rate);
    assert_eq!(n.completion_steps, f.completion_steps);
}

#[test]
fn identical_conditions_show_no_uncertainty_gap() {
    let specs = suite_specs(700, 40, &[3, 4]);
    let conds = [Condition::no_assist(), Condition::no_assist().renamed("copy")];
    let res = run_suite(&EvalConfig::default(), &conds, &specs, false).unwrap();
    let bands = stratify_by_uncertainty(&res.records, "no_assist", "copy", 300);
    assert_eq!(bands.len(), EntropyBand::ALL.len());
    assert_eq!(bands.iter().map(|b| b.episodes).sum::<usize>(), 40);
    for b in &bands {
        match b.relative_improvement {
            Some(r) => assert_eq!(r, 0.0),
            None => assert_eq!(b.note.as_deref(), Some("insufficient data")),
        }
    }
}

#[test]
fn summaries_ignore_episode_order() {
    let specs = suite_specs(800, 20, &[2, 5]);
    let res = run_suite(&EvalConfig::default(), &[Condition::no_assist()], &specs, false).unwrap();
    let mut reversed = res.records.clone();
    reversed.reverse();
    let a = brace_core::eval::summarize("no_assist", &res.records, 300);
    let b = brace_core::eval::summarize("no_assist", &reversed, 300);
    assert!((a.success_rate.mean - b.success_rate.mean).abs() < 1e-12);
    assert!((a.completion_steps.mean - b.completion_steps.mean).abs() < 1e-9);
    assert!((a.path_efficiency.mean - b.path_efficiency.mean).abs() < 1e-12);
}
