mod common;

use common::*;
use nsp_ope::mdp::exact::{exact_marginals_finite, exact_value_discounted, exact_value_finite, stationary_distribution};
use nsp_ope::{simulate_finite, simulate_iid_transitions, simulate_stationary, TabularDecisionProcess};

#[test]
fn exact_values_match_enumeration() {
    for seed in 0..10u64 {
        let (mdp, pi) = random_finite(seed, 2 + seed as usize % 3, 2 + seed as usize % 2, 1 + seed as usize % 3, seed % 2 == 0);
        assert!((exact_value_finite(&mdp, &pi).unwrap() - brute_value(&mdp, &pi)).abs() < 1e-12);
        let (mdp, pi, _) = random_discounted(seed, 2 + seed as usize % 3, 2, 0.6 + 0.03 * seed as f64);
        assert!((exact_value_discounted(&mdp, &pi).unwrap() - brute_value_discounted(&mdp, &pi)).abs() < 1e-10);
    }
}

#[test]
fn simulated_episodes_follow_the_marginals() {
    let (mdp, pi) = random_finite(3, 3, 2, 3, true);
    let n = 100_000;
    let data = simulate_finite(&mdp, &pi, n, 11).unwrap();
    let exact = exact_marginals_finite(&mdp, &pi).unwrap();
    let trajs = data.as_trajectories().unwrap();
    for (t, row) in exact.iter().enumerate() {
        for (s, &p) in row.iter().enumerate() {
            let freq = trajs.iter().filter(|x| x.state(t) == s).count() as f64 / n as f64;
            assert!((freq - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-9, "t={t} s={s}");
        }
    }
    let mean_return = trajs.iter().map(|x| x.total_reward()).sum::<f64>() / n as f64;
    assert!((mean_return - brute_value(&mdp, &pi)).abs() < 0.02);
}

#[test]
fn chains_settle_on_the_stationary_distribution() {
    let (mdp, pi, _) = random_discounted(5, 3, 2, 0.9);
    let stationary = stationary_distribution(&mdp, &pi).unwrap();
    let mdp: TabularDecisionProcess = mdp.with_sampling_dist(stationary.clone()).unwrap();
    let n = 200_000;
    let data = simulate_stationary(&mdp, &pi, n, 0, 2).unwrap();
    let tuples = data.as_transitions().unwrap();
    for (s, &p) in stationary.iter().enumerate() {
        let freq = tuples.iter().filter(|x| x.s == s).count() as f64 / n as f64;
        assert!((freq - p).abs() < 0.01, "s={s}: {freq} vs {p}");
    }
    // Consecutive tuples chain together.
    assert!(tuples.windows(2).all(|w| w[0].s_next == w[1].s && w[0].a_next == w[1].a));
}

#[test]
fn iid_tuples_are_reproducible_by_seed() {
    let (mdp, pi, p_b) = random_discounted(6, 3, 3, 0.8);
    let a = simulate_iid_transitions(&mdp, &pi, &p_b, 500, 4).unwrap();
    let b = simulate_iid_transitions(&mdp, &pi, &p_b, 500, 4).unwrap();
    let c = simulate_iid_transitions(&mdp, &pi, &p_b, 500, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
