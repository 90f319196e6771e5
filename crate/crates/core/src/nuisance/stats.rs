//! Weighted sufficient statistics for the tabular nuisance estimators.
//!
//! Every tabular estimator in this crate is a function of per-`(s, a)` visit
//! weights, reward sums and next-`(s', a')` weights. Building these from a
//! dataset gives the sample estimators; building them from exact
//! probabilities gives the population (infinite-data) versions.

use std::collections::BTreeMap;

use crate::error::{OpeError, Result};
use crate::mdp::data::{Dataset, Trajectory, TransitionTuple};
use crate::mdp::exact::exact_marginals_finite;
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;

/// Statistics of `(s, a, r, s', a')` tuples for one time step (or for
/// stationary data).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    n_states: usize,
    n_actions: usize,
    /// Total weight (the sample size for data).
    pub total: f64,
    /// `[s * n_actions + a]`
    pub count: Vec<f64>,
    pub reward_sum: Vec<f64>,
    /// Per `(s, a)`: sorted `(s', a', weight)`.
    pub next: Vec<Vec<(usize, usize, f64)>>,
}

impl SampleStats {
    pub fn empty(n_states: usize, n_actions: usize) -> Self {
        SampleStats {
            n_states,
            n_actions,
            total: 0.0,
            count: vec![0.0; n_states * n_actions],
            reward_sum: vec![0.0; n_states * n_actions],
            next: vec![Vec::new(); n_states * n_actions],
        }
    }

    fn from_maps(n_states: usize, n_actions: usize, maps: Vec<BTreeMap<(usize, usize), f64>>, count: Vec<f64>, reward_sum: Vec<f64>) -> Self {
        let total = count.iter().sum();
        let next = maps.into_iter().map(|m| m.into_iter().map(|((s, a), w)| (s, a, w)).collect()).collect();
        SampleStats { n_states, n_actions, total, count, reward_sum, next }
    }

    pub fn from_tuples(
        n_states: usize,
        n_actions: usize,
        tuples: impl IntoIterator<Item = TransitionTuple>,
    ) -> Result<Self> {
        let cells = n_states * n_actions;
        let mut count = vec![0.0; cells];
        let mut reward_sum = vec![0.0; cells];
        let mut maps = vec![BTreeMap::new(); cells];
        for x in tuples {
            if x.s >= n_states || x.s_next >= n_states || x.a >= n_actions || x.a_next >= n_actions {
                return Err(OpeError::Dimension(format!(
                    "tuple ({}, {}, {}, {}) out of range",
                    x.s, x.a, x.s_next, x.a_next
                )));
            }
            let i = x.s * n_actions + x.a;
            count[i] += 1.0;
            reward_sum[i] += x.r;
            *maps[i].entry((x.s_next, x.a_next)).or_insert(0.0) += 1.0;
        }
        Ok(Self::from_maps(n_states, n_actions, maps, count, reward_sum))
    }

    /// Population statistics of one step: `(s, a, r, s', a')` with
    /// `s ~ d`, `a ~ π(·|s, t)`, `s' ~ P_t`, `a' ~ π(·|s', t + 1)`.
    pub fn population(
        mdp: &TabularDecisionProcess,
        policy: &StochasticPolicy,
        d: &[f64],
        t: usize,
    ) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let cells = ns * na;
        let mut count = vec![0.0; cells];
        let mut reward_sum = vec![0.0; cells];
        let mut maps = vec![BTreeMap::new(); cells];
        // The action following the last step of an episode is never used.
        let t_next = (t + 1).min(policy.n_tables() - 1);
        for s in 0..ns {
            if d[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = d[s] * policy.prob(t, s, a);
                if w == 0.0 {
                    continue;
                }
                let i = s * na + a;
                count[i] = w;
                reward_sum[i] = w * mdp.mean_reward(t, s, a);
                for (j, p) in mdp.next_dist(t, s, a).iter() {
                    for a2 in 0..na {
                        let p2 = policy.prob(t_next, j, a2);
                        if p2 > 0.0 {
                            *maps[i].entry((j, a2)).or_insert(0.0) += w * p * p2;
                        }
                    }
                }
            }
        }
        Self::from_maps(ns, na, maps, count, reward_sum)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn cell(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn state_count(&self, s: usize) -> f64 {
        self.count[s * self.n_actions..(s + 1) * self.n_actions].iter().sum()
    }

    /// Weight of transitions into each next state.
    pub fn next_state_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for row in &self.next {
            for &(j, _, w) in row {
                out[j] += w;
            }
        }
        out
    }

    /// Per `(s, a)`: `(s', weight)` aggregated over `a'`.
    pub fn next_states(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(j, _, w) in &self.next[self.cell(s, a)] {
            match out.last_mut() {
                Some((k, acc)) if *k == j => *acc += w,
                _ => out.push((j, w)),
            }
        }
        out
    }
}

/// Per-time statistics of finite-horizon trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub per_time: Vec<SampleStats>,
    /// Visit weights of the terminal state `s_{H+1}`.
    pub terminal: Vec<f64>,
}

impl EpisodeStats {
    pub fn from_trajectories(n_states: usize, n_actions: usize, trajs: &[Trajectory]) -> Result<Self> {
        let horizon = trajs.first().map(Trajectory::horizon).ok_or(OpeError::EmptyDataset)?;
        if trajs.iter().any(|x| x.horizon() != horizon) {
            return Err(OpeError::Dimension("trajectories have different lengths".into()));
        }
        let mut per_time = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let tuples = trajs.iter().map(|x| TransitionTuple {
                s: x.steps[t].s,
                a: x.steps[t].a,
                r: x.steps[t].r,
                s_next: x.state(t + 1),
                a_next: x.steps.get(t + 1).map_or(0, |st| st.a),
            });
            per_time.push(SampleStats::from_tuples(n_states, n_actions, tuples)?);
        }
        let mut terminal = vec![0.0; n_states];
        for x in trajs {
            if x.terminal_state >= n_states {
                return Err(OpeError::Dimension("terminal state out of range".into()));
            }
            terminal[x.terminal_state] += 1.0;
        }
        Ok(EpisodeStats { per_time, terminal })
    }

    pub fn from_dataset(n_states: usize, n_actions: usize, data: &Dataset) -> Result<Self> {
        Self::from_trajectories(n_states, n_actions, data.as_trajectories()?)
    }

    /// Exact expected statistics of one trajectory under `policy`.
    pub fn population(mdp: &TabularDecisionProcess, policy: &StochasticPolicy) -> Result<Self> {
        let marginals = exact_marginals_finite(mdp, policy)?;
        let horizon = mdp.horizon()?;
        let per_time = (0..horizon)
            .map(|t| SampleStats::population(mdp, policy, &marginals[t], t))
            .collect();
        Ok(EpisodeStats { per_time, terminal: marginals[horizon].clone() })
    }

    pub fn horizon(&self) -> usize {
        self.per_time.len()
    }
}

/// Statistics of stationary transition data.
pub fn transition_stats(n_states: usize, n_actions: usize, data: &Dataset) -> Result<SampleStats> {
    SampleStats::from_tuples(n_states, n_actions, data.as_transitions()?.iter().copied())
}

/// Exact expected statistics of one tuple from `p_b(s) π(a|s) P(s'|s,a) π(a'|s')`.
pub fn population_transition_stats(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    p_b: &[f64],
) -> Result<SampleStats> {
    mdp.gamma()?;
    Ok(SampleStats::population(mdp, policy, p_b, 0))
}
