mod common;

use common::*;
use nsp_ope::estimators::{
    estimate_dm, estimate_mis, estimate_mo2, estimate_ti1, estimate_ti2, estimate_v2,
    mo2_initial_term, phi_mis, phi_mo1, phi_mo2, phi_naive, phi_ti1, phi_ti2, phi_v2, Discounted, EstimatorKind,
    EstimatorOptions, InitialTerm, V2Nuisance,
};
use nsp_ope::mdp::exact::{exact_value_discounted, exact_value_finite};
use nsp_ope::nuisance::{corrupt, perturb_logits, CorruptionSpec, CorruptionTarget, NuisanceSet};
use nsp_ope::policies::NaturalPolicySpec;
use nsp_ope::{simulate_finite, simulate_iid_transitions, Flavor, RewardDist, StochasticPolicy, TabularDecisionProcess};
use rand::Rng;

fn noise(target: CorruptionTarget, seed: u64) -> CorruptionSpec {
    CorruptionSpec { target, noise_mean: 0.3, noise_sd: 0.5, seed }
}

fn expect_finite(mdp: &TabularDecisionProcess, pi_b: &StochasticPolicy, f: impl Fn(&nsp_ope::Trajectory) -> f64) -> f64 {
    enumerate_trajectories(mdp, pi_b).iter().map(|(p, x)| p * f(x)).sum()
}

fn expect_transitions(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    p_b: &[f64],
    f: impl Fn(&nsp_ope::TransitionTuple) -> f64,
) -> f64 {
    enumerate_transitions(mdp, pi_b, p_b).iter().map(|(p, x)| p * f(x)).sum()
}

#[test]
fn finite_scores_have_mean_j_at_true_nuisances() {
    for seed in 0..8u64 {
        let (ns, na, h) = (2 + seed as usize % 3, 2 + seed as usize % 2, 1 + seed as usize % 3);
        let (mdp, pi_b) = random_finite(seed, ns, na, h, seed % 2 == 1);
        let tilt_spec = random_tilting(seed, na);
        let n = NuisanceSet::oracle_finite(&mdp, &pi_b, &tilt_spec).unwrap();
        let j = brute_value(&mdp, n.pi_e());
        assert!((expect_finite(&mdp, &pi_b, |x| phi_ti1(x, &n)) - j).abs() < 1e-12);
        assert!((expect_finite(&mdp, &pi_b, |x| phi_naive(x, &n)) - j).abs() < 1e-12);
        let mod_spec = random_modified(seed, ns, na);
        let n = NuisanceSet::oracle_finite(&mdp, &pi_b, &mod_spec).unwrap();
        let j = brute_value(&mdp, n.pi_e());
        assert!((expect_finite(&mdp, &pi_b, |x| phi_mo1(x, &n)) - j).abs() < 1e-12);
    }
}

#[test]
fn bandit_case_reduces_to_one_step_formula() {
    let (mdp, pi_b) = random_finite(3, 3, 2, 1, false);
    let spec = random_tilting(3, 2);
    let n = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
    for (_, x) in enumerate_trajectories(&mdp, &pi_b) {
        let st = x.steps[0];
        let direct = n.eta(0).get(st.s, st.a) * (st.r - n.v(0)[st.s]) + n.v(0)[st.s];
        assert!((phi_ti1(&x, &n) - direct).abs() < 1e-14);
    }
}

#[test]
fn on_policy_scores_telescope_to_the_return() {
    let (mdp, pi_b) = random_finite(11, 3, 2, 3, true);
    let data = simulate_finite(&mdp, &pi_b, 50, 4).unwrap();
    for spec in [NaturalPolicySpec::tilting(vec![2.0, 2.0]).unwrap(), NaturalPolicySpec::identity_treatment(3, 2)] {
        let n = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
        let opts = EstimatorOptions::new(3, 2).with_oracle(n.clone());
        let report = if spec.is_tilting() {
            estimate_ti1(&data, &spec, &opts).unwrap()
        } else {
            nsp_ope::estimators::estimate_mo1(&data, &spec, &opts).unwrap()
        };
        let trajs = data.as_trajectories().unwrap();
        let mean_return = trajs.iter().map(|x| x.total_reward()).sum::<f64>() / trajs.len() as f64;
        assert!((report.estimate - mean_return).abs() < 1e-12);
    }
}

#[test]
fn oracle_estimates_do_not_depend_on_the_number_of_folds() {
    let (mdp, pi_b) = random_finite(5, 3, 3, 2, false);
    let spec = NaturalPolicySpec::ceil_half(3);
    let data = simulate_finite(&mdp, &pi_b, 101, 9).unwrap();
    let n = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
    let a = estimate_ti1(&data, &spec, &EstimatorOptions::new(3, 3).with_oracle(n.clone()).with_k(2)).unwrap();
    let b = estimate_ti1(&data, &spec, &EstimatorOptions::new(3, 3).with_oracle(n).with_k(5)).unwrap();
    assert!((a.estimate - b.estimate).abs() < 1e-12);
    let sizes: Vec<usize> = b.per_fold.iter().map(|f| f.size).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 101);
    assert!(sizes.iter().all(|&s| s == 20 || s == 21));
}

#[test]
fn discounted_scores_have_mean_j_at_true_nuisances() {
    for seed in 0..8u64 {
        let (ns, na) = (2 + seed as usize % 3, 2 + seed as usize % 2);
        let (mdp, pi_b, p_b) = random_discounted(seed, ns, na, 0.7);
        let gamma = 0.7;
        let d = Discounted { gamma, p_e1: mdp.initial_dist() };
        let tilt_spec = random_tilting(seed, na);
        let n = NuisanceSet::oracle_stationary(&mdp, &pi_b, &tilt_spec, &p_b).unwrap();
        let j = brute_value_discounted(&mdp, n.pi_e());
        let init = (1.0 - gamma) * mdp.initial_dist().iter().zip(n.v(0)).map(|(p, v)| p * v).sum::<f64>();
        assert!((init - j).abs() < 1e-10);
        assert!(expect_transitions(&mdp, &pi_b, &p_b, |x| phi_ti2(x, &n, gamma)).abs() < 1e-12);
        assert!((expect_transitions(&mdp, &pi_b, &p_b, |x| phi_mis(x, &n)) - j).abs() < 1e-10);
        let v2 = V2Nuisance::from_set(&n).unwrap();
        assert!(expect_transitions(&mdp, &pi_b, &p_b, |x| phi_v2(x, &v2, gamma)).abs() < 1e-12);
        let mod_spec = random_modified(seed, ns, na);
        let n = NuisanceSet::oracle_stationary(&mdp, &pi_b, &mod_spec, &p_b).unwrap();
        let j = brute_value_discounted(&mdp, n.pi_e());
        let total = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_mo2(x, &n, gamma))
            + mo2_initial_term(&n, d, &InitialTerm::PluginBehavior);
        assert!((total - j).abs() < 1e-10);
    }
}

#[test]
fn partial_double_robustness_of_tilting_estimators() {
    let (mdp, pi_b) = random_finite(21, 3, 2, 3, true);
    let spec = random_tilting(21, 2);
    let truth = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
    let j = exact_value_finite(&mdp, truth.pi_e()).unwrap();
    for target in [CorruptionTarget::W, CorruptionTarget::Q] {
        let n = corrupt(&truth, &noise(target, 1)).unwrap();
        assert!((expect_finite(&mdp, &pi_b, |x| phi_ti1(x, &n)) - j).abs() < 1e-10, "{target:?}");
    }
    let n = corrupt(&truth, &noise(CorruptionTarget::PiB, 1)).unwrap();
    assert!((expect_finite(&mdp, &pi_b, |x| phi_ti1(x, &n)) - j).abs() > 1e-4);

    let (mdp, pi_b, p_b) = random_discounted(22, 3, 2, 0.8);
    let truth = NuisanceSet::oracle_stationary(&mdp, &pi_b, &spec, &p_b).unwrap();
    let j = exact_value_discounted(&mdp, truth.pi_e()).unwrap();
    for target in [CorruptionTarget::WStar, CorruptionTarget::Q] {
        let n = corrupt(&truth, &noise(target, 2)).unwrap();
        let init = (1.0 - 0.8) * mdp.initial_dist().iter().zip(n.v(0)).map(|(p, v)| p * v).sum::<f64>();
        let e = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_ti2(x, &n, 0.8)) + init;
        assert!((e - j).abs() < 1e-10, "{target:?}");
    }
}

#[test]
fn double_robustness_of_modified_treatment_estimators() {
    let (mdp, pi_b) = random_finite(31, 3, 3, 3, false);
    let spec = random_modified(31, 3, 3);
    let truth = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
    let j = exact_value_finite(&mdp, truth.pi_e()).unwrap();
    let both = corrupt(&corrupt(&truth, &noise(CorruptionTarget::PiB, 3)).unwrap(), &noise(CorruptionTarget::W, 4)).unwrap();
    assert!((expect_finite(&mdp, &pi_b, |x| phi_mo1(x, &both)) - j).abs() < 1e-10);
    let q_only = corrupt(&truth, &noise(CorruptionTarget::Q, 5)).unwrap();
    assert!((expect_finite(&mdp, &pi_b, |x| phi_mo1(x, &q_only)) - j).abs() < 1e-10);

    let (mdp, pi_b, p_b) = random_discounted(32, 3, 3, 0.75);
    let spec = random_modified(32, 3, 3);
    let truth = NuisanceSet::oracle_stationary(&mdp, &pi_b, &spec, &p_b).unwrap();
    let j = exact_value_discounted(&mdp, truth.pi_e()).unwrap();
    let d = Discounted { gamma: 0.75, p_e1: mdp.initial_dist() };
    let both = corrupt(&corrupt(&truth, &noise(CorruptionTarget::PiB, 6)).unwrap(), &noise(CorruptionTarget::WStar, 7))
        .unwrap();
    let e = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_mo2(x, &both, 0.75))
        + mo2_initial_term(&both, d, &InitialTerm::ExactBehavior(pi_b.clone()));
    assert!((e - j).abs() < 1e-10);
    let q_only = corrupt(&truth, &noise(CorruptionTarget::Q, 8)).unwrap();
    let e = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_mo2(x, &q_only, 0.75))
        + mo2_initial_term(&q_only, d, &InitialTerm::PluginBehavior);
    assert!((e - j).abs() < 1e-10);
}

#[test]
fn value_direct_estimator_is_doubly_robust() {
    let (mdp, pi_b, p_b) = random_discounted(41, 4, 2, 0.9);
    let spec = random_tilting(41, 2);
    let truth = NuisanceSet::oracle_stationary(&mdp, &pi_b, &spec, &p_b).unwrap();
    let j = exact_value_discounted(&mdp, truth.pi_e()).unwrap();
    let base = V2Nuisance::from_set(&truth).unwrap();
    let mut rng = rng(1);
    for which in 0..2 {
        let mut n = base.clone();
        let target = if which == 0 { &mut n.v } else { &mut n.w_star };
        target.iter_mut().for_each(|x| *x += rng.random_range(-1.0..1.0));
        let init = 0.1 * mdp.initial_dist().iter().zip(&n.v).map(|(p, v)| p * v).sum::<f64>();
        let e = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_v2(x, &n, 0.9)) + init;
        assert!((e - j).abs() < 1e-10, "case {which}: {e} vs {j}");
    }
}

fn bias_slope(eps: &[f64], bias: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = bias.iter().map(|b| b.abs().ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn tilting_bias_is_second_order_and_naive_bias_first_order() {
    let (mdp, pi_b) = random_finite(51, 3, 3, 3, false);
    let spec = NaturalPolicySpec::ceil_half(3);
    let truth = NuisanceSet::oracle_finite(&mdp, &pi_b, &spec).unwrap();
    let j = exact_value_finite(&mdp, truth.pi_e()).unwrap();
    let mut r = rng(7);
    let direction: Vec<f64> = (0..pi_b.n_tables() * 9).map(|_| r.random_range(-1.0..1.0)).collect();
    let eps = [0.02, 0.04, 0.08];
    let mut ti1 = Vec::new();
    let mut naive = Vec::new();
    for &e in &eps {
        let tables = (0..pi_b.n_tables())
            .map(|t| {
                (0..3)
                    .flat_map(|s| {
                        let mut k = 0;
                        perturb_logits(pi_b.probs(t, s), |x| {
                            k += 1;
                            x + e * direction[t * 9 + s * 3 + k - 1]
                        })
                    })
                    .collect()
            })
            .collect();
        let n = truth.with_pi_b(StochasticPolicy::from_tables(3, 3, tables).unwrap()).unwrap();
        ti1.push(expect_finite(&mdp, &pi_b, |x| phi_ti1(x, &n)) - j);
        naive.push(expect_finite(&mdp, &pi_b, |x| phi_naive(x, &n)) - j);
    }
    assert!(bias_slope(&eps, &ti1) >= 1.7, "{ti1:?}");
    assert!(bias_slope(&eps, &naive) <= 1.3, "{naive:?}");
}

#[test]
fn mis_and_dm_break_under_their_own_misspecification() {
    let (mdp, pi_b, p_b) = random_discounted(61, 3, 2, 0.8);
    let spec = random_tilting(61, 2);
    let truth = NuisanceSet::oracle_stationary(&mdp, &pi_b, &spec, &p_b).unwrap();
    let j = exact_value_discounted(&mdp, truth.pi_e()).unwrap();
    let shift = CorruptionSpec { target: CorruptionTarget::WStar, noise_mean: 3.0, noise_sd: 0.0, seed: 0 };
    let n = corrupt(&truth, &shift).unwrap();
    let bias = expect_transitions(&mdp, &pi_b, &p_b, |x| phi_mis(x, &n)) - j;
    let expected = 3.0 * expect_transitions(&mdp, &pi_b, &p_b, |x| truth.eta(0).get(x.s, x.a) * x.r);
    assert!((bias - expected).abs() < 1e-10);

    let data = simulate_iid_transitions(&mdp, &pi_b, &p_b, 100, 1).unwrap();
    let d = Discounted { gamma: 0.8, p_e1: mdp.initial_dist() };
    let dm = estimate_dm(&data, &spec, Some(d), &EstimatorOptions::new(3, 2).with_oracle(truth.clone())).unwrap();
    assert!((dm.estimate - j).abs() < 1e-12);
    let shift_q = CorruptionSpec { target: CorruptionTarget::Q, noise_mean: 3.0, noise_sd: 0.0, seed: 0 };
    let dm = estimate_dm(&data, &spec, Some(d), &EstimatorOptions::new(3, 2).with_oracle(truth).with_corruption(shift_q))
        .unwrap();
    assert!((dm.estimate - j - 3.0 * 0.2).abs() < 1e-10);
}

#[test]
fn single_state_process_gives_the_constant_reward() {
    let mdp = TabularDecisionProcess::from_dense(
        1,
        2,
        Flavor::StationaryDiscounted { gamma: 0.9 },
        vec![vec![vec![vec![1.0], vec![1.0]]]],
        vec![vec![vec![RewardDist::deterministic(0.4), RewardDist::deterministic(0.4)]]],
        vec![1.0],
        Some(vec![1.0]),
        1.0,
    )
    .unwrap();
    let pi_b = StochasticPolicy::stationary(vec![vec![0.3, 0.7]]).unwrap();
    let spec = NaturalPolicySpec::tilting(vec![1.0, 2.0]).unwrap();
    let data = simulate_iid_transitions(&mdp, &pi_b, &[1.0], 200, 3).unwrap();
    let d = Discounted { gamma: 0.9, p_e1: &[1.0] };
    let mut opts = EstimatorOptions::new(1, 2);
    for r in [
        estimate_ti2(&data, &spec, d, &opts).unwrap(),
        estimate_mis(&data, &spec, d, &opts).unwrap(),
        estimate_dm(&data, &spec, Some(d), &opts).unwrap(),
    ] {
        assert!((r.estimate - 0.4).abs() < 1e-9, "{}: {}", r.estimator, r.estimate);
    }
    opts.behavior = Some(pi_b);
    let v2 = estimate_v2(&data, &spec, d, &opts).unwrap().estimate;
    // The direct value fit uses unnormalized ratios, so it is only exact in-fold.
    assert!((v2 - 0.4).abs() < 0.05, "{v2}");
}

#[test]
fn estimated_nuisances_give_consistent_estimates() {
    let (mdp, pi_b) = random_finite(71, 3, 2, 2, false);
    let spec = NaturalPolicySpec::ceil_half(2);
    let spec = if spec.is_tilting() { NaturalPolicySpec::tilting(vec![1.0, 2.0]).unwrap() } else { spec };
    let pi_e = spec.evaluation_policy(&pi_b).unwrap();
    let j = exact_value_finite(&mdp, &pi_e).unwrap();
    let data = simulate_finite(&mdp, &pi_b, 20_000, 5).unwrap();
    let r = estimate_ti1(&data, &spec, &EstimatorOptions::new(3, 2).with_seed(1)).unwrap();
    assert!((r.estimate - j).abs() < 4.0 * r.se.unwrap(), "{} vs {j} (se {:?})", r.estimate, r.se);

    let (mdp, pi_b, p_b) = random_discounted(72, 3, 2, 0.8);
    let mspec = NaturalPolicySpec::shift_mod(3, 2, 2).unwrap();
    let j = exact_value_discounted(&mdp, &mspec.evaluation_policy(&pi_b).unwrap()).unwrap();
    let data = simulate_iid_transitions(&mdp, &pi_b, &p_b, 40_000, 6).unwrap();
    let d = Discounted { gamma: 0.8, p_e1: mdp.initial_dist() };
    let r = estimate_mo2(&data, &mspec, d, &EstimatorOptions::new(3, 2)).unwrap();
    assert!((r.estimate - j).abs() < 4.0 * r.se.unwrap(), "{} vs {j}", r.estimate);
    let r = estimate_ti2(&data, &spec, d, &EstimatorOptions::new(3, 2)).unwrap();
    let j = exact_value_discounted(&mdp, &spec.evaluation_policy(&pi_b).unwrap()).unwrap();
    assert!((r.estimate - j).abs() < 4.0 * r.se.unwrap(), "{} vs {j}", r.estimate);
}

#[test]
fn estimator_names_round_trip() {
    for kind in EstimatorKind::ALL {
        assert_eq!(kind.name().parse::<EstimatorKind>().unwrap(), kind);
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, format!("\"{}\"", kind.name()));
    }
    assert!("TI3".parse::<EstimatorKind>().is_err());
}
