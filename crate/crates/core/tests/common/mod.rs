//! Random small instances and brute-force enumeration oracles shared by the
//! integration and acceptance tests. Nothing here calls the crate's exact
//! DP or bound code.

#![allow(dead_code)]

use nsp_ope::policies::NaturalPolicySpec;
use nsp_ope::{
    Flavor, RewardDist, StochasticPolicy, TabularDecisionProcess, Trajectory, Step, TransitionTuple,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Sparse-ish random distribution: some entries may be zero.
pub fn random_sparse_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() }).collect();
        let z: f64 = raw.iter().sum();
        if z > 0.1 {
            return raw.into_iter().map(|x| x / z).collect();
        }
    }
}

fn random_reward(rng: &mut ChaCha8Rng) -> RewardDist {
    let atoms = rng.random_range(1..=2);
    let probs = random_simplex(rng, atoms, 0.2);
    let pairs: Vec<(f64, f64)> = probs.into_iter().map(|p| (rng.random::<f64>(), p)).collect();
    RewardDist::from_pairs(&pairs)
}

fn random_kernels(
    rng: &mut ChaCha8Rng,
    ns: usize,
    na: usize,
    kernels: usize,
) -> (Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<RewardDist>>>) {
    let transition = (0..kernels)
        .map(|_| (0..ns).map(|_| (0..na).map(|_| random_sparse_simplex(rng, ns)).collect()).collect())
        .collect();
    let reward = (0..kernels)
        .map(|_| (0..ns).map(|_| (0..na).map(|_| random_reward(rng)).collect()).collect())
        .collect();
    (transition, reward)
}

/// Random finite-horizon process with a full-support behavior policy.
pub fn random_finite(seed: u64, ns: usize, na: usize, horizon: usize, time_varying: bool) -> (TabularDecisionProcess, StochasticPolicy) {
    let mut rng = rng(seed);
    let kernels = if time_varying { horizon } else { 1 };
    let (transition, reward) = random_kernels(&mut rng, ns, na, kernels);
    let initial = random_sparse_simplex(&mut rng, ns);
    let mdp = TabularDecisionProcess::from_dense(
        ns,
        na,
        Flavor::FiniteHorizon { horizon, time_varying },
        transition,
        reward,
        initial,
        None,
        1.0,
    )
    .unwrap();
    let tables = (0..horizon)
        .map(|_| (0..ns).flat_map(|_| random_simplex(&mut rng, na, 0.3)).collect())
        .collect();
    (mdp, StochasticPolicy::from_tables(ns, na, tables).unwrap())
}

/// Random discounted process with a full-support stationary behavior
/// policy and a full-support sampling distribution.
pub fn random_discounted(seed: u64, ns: usize, na: usize, gamma: f64) -> (TabularDecisionProcess, StochasticPolicy, Vec<f64>) {
    let mut rng = rng(seed);
    let (transition, reward) = random_kernels(&mut rng, ns, na, 1);
    let initial = random_sparse_simplex(&mut rng, ns);
    let p_b = random_simplex(&mut rng, ns, 0.2);
    let mdp = TabularDecisionProcess::from_dense(
        ns,
        na,
        Flavor::StationaryDiscounted { gamma },
        transition,
        reward,
        initial,
        Some(p_b.clone()),
        1.0,
    )
    .unwrap();
    let rows = (0..ns).map(|_| random_simplex(&mut rng, na, 0.3)).collect();
    (mdp, StochasticPolicy::stationary(rows).unwrap(), p_b)
}

pub fn random_tilting(seed: u64, na: usize) -> NaturalPolicySpec {
    let mut rng = rng(seed ^ 0xA5A5);
    NaturalPolicySpec::tilting((0..na).map(|_| rng.random_range(0.5..3.0)).collect()).unwrap()
}

pub fn random_modified(seed: u64, ns: usize, na: usize) -> NaturalPolicySpec {
    let mut rng = rng(seed ^ 0x5A5A);
    let tau = (0..ns)
        .map(|_| {
            let mut perm: Vec<usize> = (0..na).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    NaturalPolicySpec::modified(tau).unwrap()
}

/// The tilted evaluation policy, computed from its definition.
pub fn tilt(pi_b: &StochasticPolicy, u: &[f64], t: usize) -> Vec<Vec<f64>> {
    (0..pi_b.n_states())
        .map(|s| {
            let raw: Vec<f64> = pi_b.probs(t, s).iter().zip(u).map(|(p, w)| p * w).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Every trajectory of a finite-horizon process with its probability,
/// reward atoms included.
pub fn enumerate_trajectories(mdp: &TabularDecisionProcess, pi: &StochasticPolicy) -> Vec<(f64, Trajectory)> {
    let horizon = mdp.horizon().unwrap();
    let mut out = Vec::new();
    for s in 0..mdp.n_states() {
        let p = mdp.initial_dist()[s];
        if p > 0.0 {
            extend(mdp, pi, horizon, p, s, Vec::new(), &mut out);
        }
    }
    out
}

fn extend(
    mdp: &TabularDecisionProcess,
    pi: &StochasticPolicy,
    horizon: usize,
    prob: f64,
    s: usize,
    steps: Vec<Step>,
    out: &mut Vec<(f64, Trajectory)>,
) {
    let t = steps.len();
    if t == horizon {
        out.push((prob, Trajectory { steps, terminal_state: s }));
        return;
    }
    for a in 0..mdp.n_actions() {
        let pa = pi.prob(t, s, a);
        if pa == 0.0 {
            continue;
        }
        for atom in &mdp.reward_dist(t, s, a).support {
            for s2 in 0..mdp.n_states() {
                let p2 = mdp.transition_prob(t, s, a, s2);
                if p2 == 0.0 || atom.prob == 0.0 {
                    continue;
                }
                let mut next = steps.clone();
                next.push(Step { s, a, r: atom.value });
                extend(mdp, pi, horizon, prob * pa * atom.prob * p2, s2, next, out);
            }
        }
    }
}

/// Every tuple `(s, a, r, s', a')` from `p_b(s) π(a|s) p(r|s,a) P(s'|s,a) π(a'|s')`.
pub fn enumerate_transitions(mdp: &TabularDecisionProcess, pi: &StochasticPolicy, p_b: &[f64]) -> Vec<(f64, TransitionTuple)> {
    let mut out = Vec::new();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    for s in 0..ns {
        for a in 0..na {
            let p = p_b[s] * pi.prob(0, s, a);
            if p == 0.0 {
                continue;
            }
            for atom in &mdp.reward_dist(0, s, a).support {
                for s2 in 0..ns {
                    let p2 = mdp.transition_prob(0, s, a, s2);
                    for a2 in 0..na {
                        let w = p * atom.prob * p2 * pi.prob(0, s2, a2);
                        if w > 0.0 {
                            out.push((w, TransitionTuple { s, a, r: atom.value, s_next: s2, a_next: a2 }));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Brute-force policy value: expected total reward over all trajectories.
pub fn brute_value(mdp: &TabularDecisionProcess, pi: &StochasticPolicy) -> f64 {
    enumerate_trajectories(mdp, pi).iter().map(|(p, x)| p * x.total_reward()).sum()
}

/// Brute-force discounted value `(1-γ) Σ_t γ^t E[r_t]` by power iteration
/// on the state distribution, truncated when the tail is below `1e-15`.
pub fn brute_value_discounted(mdp: &TabularDecisionProcess, pi: &StochasticPolicy) -> f64 {
    let gamma = mdp.gamma().unwrap();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut d = mdp.initial_dist().to_vec();
    let mut total = 0.0;
    let mut disc = 1.0;
    while disc > 1e-16 {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let w = d[s] * pi.prob(0, s, a);
                total += disc * w * mdp.mean_reward(0, s, a);
                for s2 in 0..ns {
                    next[s2] += w * mdp.transition_prob(0, s, a, s2);
                }
            }
        }
        d = next;
        disc *= gamma;
    }
    (1.0 - gamma) * total
}

pub fn mean_var(items: &[(f64, f64)]) -> (f64, f64) {
    let mean: f64 = items.iter().map(|(p, x)| p * x).sum();
    let var = items.iter().map(|(p, x)| p * (x - mean).powi(2)).sum();
    (mean, var)
}

/// Sample variance.
pub fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Backward induction written out directly: `v[t][s]` for `t = 0..=H`
/// under the per-time evaluation probabilities `pe(t, s, a)`.
pub fn brute_v(mdp: &TabularDecisionProcess, pe: impl Fn(usize, usize, usize) -> f64) -> Vec<Vec<f64>> {
    let horizon = mdp.horizon().unwrap();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            let mut acc = 0.0;
            for a in 0..na {
                let mut q = mdp.mean_reward(t, s, a);
                for s2 in 0..ns {
                    q += mdp.transition_prob(t, s, a, s2) * v[t + 1][s2];
                }
                acc += pe(t, s, a) * q;
            }
            v[t][s] = acc;
        }
    }
    v
}
