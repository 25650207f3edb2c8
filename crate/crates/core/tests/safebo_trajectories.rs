use transductive::acquisition::DecisionRule;
use transductive::safebo::{
    compute_sets, safebo_step, thompson_targets, GroundTruth, SafeBoConfig, SafeBoState, TargetMode,
};
use transductive::{FiniteDomain, GaussianBelief, Kernel};

/// Truth drawn from the prior, so that the confidence intervals are
/// calibrated.
fn prior_sampled_state(seed: u64) -> SafeBoState {
    use rand::SeedableRng;
    let domain = FiniteDomain::grid(&[-2.0], &[2.0], 80).unwrap();
    let prior = GaussianBelief::prior(&domain, &Kernel::gaussian(0.6), |_| 0.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..80).collect();
    let f = prior.sample(&all, 1, &mut rng).unwrap().remove(0);
    let g = prior.sample(&all, 1, &mut rng).unwrap().remove(0);
    // Shift the constraint so that the middle point is comfortably safe.
    let shift = 1.0 - g[40];
    let g_prior = GaussianBelief::new(prior.mean().add_scalar(shift), prior.cov().clone()).unwrap();
    let g: Vec<f64> = g.iter().map(|v| v + shift).collect();
    let truth = GroundTruth::new(f.as_slice().to_vec(), vec![g]).unwrap();
    let config = SafeBoConfig {
        beta: 3.0,
        noise_f: 1e-3,
        noise_g: vec![1e-3],
        target_cap: None,
        seed,
    };
    let mut state = SafeBoState::new(domain.all_points(), prior, vec![g_prior], truth, &[40], &config).unwrap();
    state.observe(40).unwrap();
    state
}

#[test]
fn trajectory_invariants() {
    for seed in 0..4 {
        let mut state = prior_sampled_state(seed);
        let mut prev_sets = state.sets().clone();
        let mut prev_conf = state.confidence().clone();
        for _ in 0..25 {
            let row = safebo_step(&mut state, DecisionRule::ITL, TargetMode::Maximizers).unwrap();
            assert!(!row.violation);
            let sets = state.sets().clone();
            let conf = state.confidence().clone();
            assert!(prev_sets.safe.iter().all(|i| sets.safe.contains(i)));
            assert!(sets.safe.iter().all(|i| sets.optimistic.contains(i)));
            assert!(sets.maximizers.iter().all(|i| prev_sets.maximizers.contains(i)));
            for i in 0..conf.len() {
                assert!(conf.f.width(i) <= prev_conf.f.width(i) + 1e-12);
                assert!(conf.g[0].width(i) <= prev_conf.g[0].width(i) + 1e-12);
                assert!(conf.f.lower[i] <= conf.f.upper[i]);
            }
            // The true safe argmax stays a potential maximizer.
            let truth = state.truth().clone();
            let best = truth
                .safe_set
                .iter()
                .copied()
                .find(|&i| truth.f[i] == truth.safe_optimum)
                .unwrap();
            if sets.optimistic.contains(&best) {
                assert!(sets.maximizers.contains(&best));
            }
            prev_sets = sets;
            prev_conf = conf;
        }
    }
}

#[test]
fn thompson_support_within_maximizers() {
    let mut state = prior_sampled_state(7);
    for _ in 0..10 {
        safebo_step(&mut state, DecisionRule::ITL, TargetMode::Maximizers).unwrap();
    }
    let sets = compute_sets(state.confidence(), &[40]);
    let draws = thompson_targets(&mut state, 50).unwrap();
    let outside = draws.iter().filter(|i| !sets.maximizers.contains(i)).count();
    // Sampled values may fall outside the β-intervals occasionally.
    assert!(outside * 10 <= draws.len(), "{outside} of {} outside", draws.len());
}

#[test]
fn thompson_mode_runs_safely() {
    let mut state = prior_sampled_state(3);
    for _ in 0..15 {
        let row = safebo_step(&mut state, DecisionRule::Vtl, TargetMode::Thompson(5)).unwrap();
        assert!(!row.violation);
    }
}
