//! Shared fixtures for the criterion benches.

use nsp_ope::experiments::{build_taxi, q_learning, QLearningConfig, TaxiVariant};
use nsp_ope::policies::NaturalPolicySpec;
use nsp_ope::{
    simulate_finite, simulate_stationary, stationary_distribution, Dataset, Flavor, RewardDist, StochasticPolicy,
    TabularDecisionProcess,
};

/// Taxi (500 states) with a q-learned behavior policy and `H` stationary transitions.
pub struct TaxiFixture {
    pub mdp: TabularDecisionProcess,
    pub pi_b: StochasticPolicy,
    pub tilting: NaturalPolicySpec,
    pub modified: NaturalPolicySpec,
    pub data: Dataset,
}

pub fn taxi_fixture(horizon: usize) -> TaxiFixture {
    let env = build_taxi(TaxiVariant::Small, 0.98).expect("taxi");
    let (pi_b, _) = q_learning(&env, &QLearningConfig::default(), 1).expect("q-learning");
    let p_b = stationary_distribution(&env, &pi_b).expect("stationary distribution");
    let mdp = env.with_sampling_dist(p_b).expect("sampling distribution");
    let data = simulate_stationary(&mdp, &pi_b, horizon, 0, 2).expect("simulate");
    let tilting = NaturalPolicySpec::ceil_half(mdp.n_actions());
    let modified = NaturalPolicySpec::shift_mod(mdp.n_states(), mdp.n_actions(), mdp.n_actions()).expect("tau");
    TaxiFixture { mdp, pi_b, tilting, modified, data }
}

/// Three-state, two-action finite-horizon process with `n` behavior episodes.
pub fn chain_fixture(horizon: usize, n: usize) -> (TabularDecisionProcess, StochasticPolicy, Dataset) {
    let transition = vec![vec![
        vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3]],
        vec![vec![0.3, 0.4, 0.3], vec![0.2, 0.2, 0.6]],
        vec![vec![0.5, 0.0, 0.5], vec![0.1, 0.1, 0.8]],
    ]];
    let reward = vec![vec![
        vec![RewardDist::from_pairs(&[(0.0, 0.5), (1.0, 0.5)]), RewardDist::deterministic(0.2)],
        vec![RewardDist::deterministic(0.6), RewardDist::from_pairs(&[(0.0, 0.3), (1.0, 0.7)])],
        vec![RewardDist::deterministic(0.1), RewardDist::deterministic(0.9)],
    ]];
    let mdp = TabularDecisionProcess::from_dense(
        3,
        2,
        Flavor::FiniteHorizon { horizon, time_varying: false },
        transition,
        reward,
        vec![0.5, 0.3, 0.2],
        None,
        1.0,
    )
    .expect("chain");
    let pi_b = StochasticPolicy::stationary(vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.5, 0.5]]).expect("policy");
    let data = simulate_finite(&mdp, &pi_b, n, 3).expect("simulate");
    (mdp, pi_b, data)
}
