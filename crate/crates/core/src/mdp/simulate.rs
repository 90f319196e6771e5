//! Seeded trajectory and transition samplers.
//!
//! All samplers use ChaCha8 seeded from the caller's `u64`, so a dataset is a
//! pure function of `(process, policy, n, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OpeError, Result};
use crate::mdp::data::{Dataset, Step, Trajectory, TransitionTuple};
use crate::mdp::model::{RewardDist, SparseRow, TabularDecisionProcess};
use crate::mdp::policy::StochasticPolicy;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the last partial sum; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[inline]
fn sample_next<R: Rng + ?Sized>(rng: &mut R, row: &SparseRow) -> usize {
    row.next[sample_index(rng, &row.prob)]
}

#[inline]
fn sample_reward<R: Rng + ?Sized>(rng: &mut R, dist: &RewardDist) -> f64 {
    if dist.support.len() == 1 {
        return dist.support[0].value;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for atom in &dist.support {
        acc += atom.prob;
        if u < acc {
            return atom.value;
        }
    }
    dist.support.last().map_or(0.0, |x| x.value)
}

/// Draws `n` i.i.d. episodes of length `H` under `policy`.
pub fn simulate_finite(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let horizon = mdp.horizon()?;
    policy.check_dims(mdp.n_states(), mdp.n_actions(), Some(horizon))?;
    if n == 0 {
        return Err(OpeError::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let records = (0..n)
        .map(|_| sample_trajectory(mdp, policy, horizon, &mut rng))
        .collect();
    Dataset::trajectories(records, Some(seed))
}

pub(crate) fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let mut s = sample_index(rng, mdp.initial_dist());
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a = sample_index(rng, policy.probs(t, s));
        let r = sample_reward(rng, mdp.reward_dist(t, s, a));
        steps.push(Step { s, a, r });
        s = sample_next(rng, mdp.next_dist(t, s, a));
    }
    Trajectory { steps, terminal_state: s }
}

/// Draws `n` consecutive transitions from a single chain after `burn_in`
/// steps, started from the sampling distribution (or the initial
/// distribution when none is set).
///
/// Ergodicity is the caller's responsibility: a chain that never reaches
/// parts of the state space simply never produces them.
pub fn simulate_stationary(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Dataset> {
    mdp.gamma()?;
    policy.check_dims(mdp.n_states(), mdp.n_actions(), None)?;
    if n == 0 {
        return Err(OpeError::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let start = mdp.sampling_dist().unwrap_or(mdp.initial_dist());
    let mut s = sample_index(&mut rng, start);
    let mut a = sample_index(&mut rng, policy.probs(0, s));
    for _ in 0..burn_in {
        s = sample_next(&mut rng, mdp.next_dist(0, s, a));
        a = sample_index(&mut rng, policy.probs(0, s));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let r = sample_reward(&mut rng, mdp.reward_dist(0, s, a));
        let s_next = sample_next(&mut rng, mdp.next_dist(0, s, a));
        let a_next = sample_index(&mut rng, policy.probs(0, s_next));
        records.push(TransitionTuple { s, a, r, s_next, a_next });
        s = s_next;
        a = a_next;
    }
    Dataset::transitions(records, Some(seed))
}

/// Draws `n` independent tuples from `p_b(s) π(a|s) p(r|s,a) P(s'|s,a) π(a'|s')`.
pub fn simulate_iid_transitions(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    p_b: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    mdp.gamma()?;
    policy.check_dims(mdp.n_states(), mdp.n_actions(), None)?;
    if p_b.len() != mdp.n_states() {
        return Err(OpeError::Dimension("sampling distribution length".into()));
    }
    if n == 0 {
        return Err(OpeError::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let records = (0..n)
        .map(|_| {
            let s = sample_index(&mut rng, p_b);
            let a = sample_index(&mut rng, policy.probs(0, s));
            let r = sample_reward(&mut rng, mdp.reward_dist(0, s, a));
            let s_next = sample_next(&mut rng, mdp.next_dist(0, s, a));
            let a_next = sample_index(&mut rng, policy.probs(0, s_next));
            TransitionTuple { s, a, r, s_next, a_next }
        })
        .collect();
    Dataset::transitions(records, Some(seed))
}

/// Auxiliary `(s, a)` draws from `p_e^(1)(s) π(a|s)`.
pub fn sample_initial_pairs(
    initial: &[f64],
    policy: &StochasticPolicy,
    m: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = rng_from_seed(seed);
    (0..m)
        .map(|_| {
            let s = sample_index(&mut rng, initial);
            (s, sample_index(&mut rng, policy.probs(0, s)))
        })
        .collect()
}
