use brace_core::neural::gradcheck::check_policy;
use brace_core::neural::{PolicyNet, INPUT_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backward_matches_finite_differences_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..20 {
        let mut net = PolicyNet::new(seed);
        // Scale weights up so the actor head is not near-constant.
        for s in net.param_slices_mut() {
            s.iter_mut().for_each(|w| *w *= rng.random_range(0.5..3.0));
        }
        let x: Vec<f64> = (0..INPUT_DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rep = check_policy(&net, &x, 1.0, 0.7, 300, &mut rng).unwrap();
        assert!(rep.max_rel_error < 1e-4, "net {seed}: {}", rep.max_rel_error);
    }
}
