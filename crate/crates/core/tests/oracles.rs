mod common;

use rand::Rng;

use superstate::planning::{monte_carlo_pomdp_value, monte_carlo_superstate_value, superstate_policy_values, truncation_horizon};
use superstate::rng::stream;
use superstate::{
    build_exact, optimal_superstate_value, pomdp_policy_value, probe_env, random_pomdp, superstate_policy_value,
    theoretical_sample_size, BoundParams, RewardTiming, WindowPolicy,
};

use common::{oracle_sample_size, perfect_observation_pomdp, perturb};

#[test]
fn perfect_observation_superstate_matches_pomdp() {
    for timing in [RewardTiming::PreviousObservation, RewardTiming::CurrentObservation] {
        let p = perfect_observation_pomdp(3).with_reward_timing(timing);
        for m in 1..=2 {
            let model = build_exact(&p, m).unwrap();
            for seed in 0..3 {
                let pi = WindowPolicy::random(model.index(), seed);
                let a = superstate_policy_value(&model, &pi, 0.9).unwrap();
                let b = pomdp_policy_value(&p, &pi, 0.9).unwrap();
                assert!((a - b).abs() <= 1e-9, "{timing:?} m={m}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn pomdp_evaluation_matches_simulation() {
    let p = probe_env(0.95).unwrap();
    let idx = superstate::WindowIndex::build(3, 2, 2).unwrap();
    let pi = WindowPolicy::random(&idx, 42);
    let exact = pomdp_policy_value(&p, &pi, 0.95).unwrap();
    let mc = monte_carlo_pomdp_value(&p, &pi, 0.95, 20_000, truncation_horizon(0.95), 1).unwrap();
    assert!((mc.mean - exact).abs() <= 4.0 * mc.std_err + 1e-3, "{exact} vs {mc:?}");
}

#[test]
fn superstate_evaluation_matches_simulation() {
    let p = random_pomdp(2, 2, 2, 0.05, 0.05, 8).unwrap();
    let model = build_exact(&p, 2).unwrap();
    let pi = WindowPolicy::random(model.index(), 4);
    let exact = superstate_policy_value(&model, &pi, 0.9).unwrap();
    let mc = monte_carlo_superstate_value(&model, &pi, 0.9, 20_000, truncation_horizon(0.9), 2).unwrap();
    assert!((mc.mean - exact).abs() <= 4.0 * mc.std_err + 1e-3, "{exact} vs {mc:?}");
}

#[test]
fn window_policies_never_beat_the_superstate_optimum() {
    let p = random_pomdp(3, 2, 2, 0.05, 0.05, 21).unwrap();
    let model = build_exact(&p, 2).unwrap();
    let (v_star, _) = optimal_superstate_value(&model, 0.95, 1e-10).unwrap();
    for seed in 0..10 {
        let pi = WindowPolicy::random(model.index(), seed);
        assert!(superstate_policy_value(&model, &pi, 0.95).unwrap() <= v_star + 1e-9);
    }
}

#[test]
fn perturbed_models_obey_the_simulation_lemma() {
    let p = probe_env(0.95).unwrap();
    let model = build_exact(&p, 1).unwrap();
    let pi = WindowPolicy::random(model.index(), 0);
    let base = superstate_policy_values(&model, &pi, 0.95).unwrap();
    let mut rng = stream(5);
    for _ in 0..10 {
        let eps = 0.02;
        let pert = perturb(&model, eps, &mut rng);
        let v = superstate_policy_values(&pert, &pi, 0.95).unwrap();
        let diff = base.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 2.0 * eps / 0.05f64.powi(2));
    }
}

#[test]
fn calculator_matches_big_integer_oracle() {
    let mut rng = stream(77);
    for _ in 0..10 {
        let p = BoundParams {
            eps: rng.gen_range(0.05..0.5),
            delta: rng.gen_range(0.01..0.2),
            m: rng.gen_range(1..=3),
            n_states: 2,
            n_actions: rng.gen_range(2..=3),
            n_obs: 2,
            alpha: rng.gen_range(0.05..0.5),
            beta: rng.gen_range(0.05..0.5),
            gamma: rng.gen_range(0.8..0.99),
        };
        let got = theoretical_sample_size(&p).unwrap();
        assert_eq!((got.t_bound, got.t_saturated, got.k_bound), oracle_sample_size(&p), "{p:?}");
    }
}
