//! The tabular decision-process model and its on-disk representation.

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Tolerance for validating that probability vectors sum to one.
pub const PROB_TOL: f64 = 1e-12;
/// Tolerance for residuals of the exact linear solves.
pub const SOLVER_TOL: f64 = 1e-10;

/// Finite-horizon (possibly time-varying) or stationary discounted process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flavor {
    FiniteHorizon { horizon: usize, time_varying: bool },
    StationaryDiscounted { gamma: f64 },
}

/// Finite-support reward distribution for one `(t, s, a)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDist {
    pub support: Vec<RewardAtom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardAtom {
    pub value: f64,
    pub prob: f64,
}

impl RewardDist {
    pub fn deterministic(value: f64) -> Self {
        RewardDist {
            support: vec![RewardAtom { value, prob: 1.0 }],
        }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        RewardDist {
            support: pairs
                .iter()
                .map(|&(value, prob)| RewardAtom { value, prob })
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|x| x.value * x.prob).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.support.iter().map(|x| x.value * x.value * x.prob).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .map(|x| (x.value - m) * (x.value - m) * x.prob)
            .sum()
    }
}

/// Sparse next-state distribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub next: Vec<usize>,
    pub prob: Vec<f64>,
}

impl SparseRow {
    pub fn from_dense(row: &[f64]) -> Self {
        let mut out = SparseRow::default();
        for (j, &p) in row.iter().enumerate() {
            if p != 0.0 {
                out.next.push(j);
                out.prob.push(p);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.next.iter().copied().zip(self.prob.iter().copied())
    }

    pub fn expect(&self, f: &[f64]) -> f64 {
        self.iter().map(|(j, p)| p * f[j]).sum()
    }
}

/// A finite-state, finite-action decision process.
///
/// Time is 0-based: kernel `t` maps `(s_t, a_t)` to `s_{t+1}` for
/// `t = 0..H`. Time-homogeneous processes store a single kernel and a single
/// reward table, shared by every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProcess", into = "RawProcess")]
pub struct TabularDecisionProcess {
    n_states: usize,
    n_actions: usize,
    flavor: Flavor,
    /// `[kernel][s * n_actions + a]`
    transition: Vec<Vec<SparseRow>>,
    /// `[kernel][s * n_actions + a]`
    reward: Vec<Vec<RewardDist>>,
    initial_dist: Vec<f64>,
    sampling_dist: Option<Vec<f64>>,
    r_max: f64,
}

/// Serialized form: dense nested arrays mirroring the model fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawProcess {
    pub n_states: usize,
    pub n_actions: usize,
    pub flavor: Flavor,
    /// `transition[k][s][a][s']`
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `reward[k][s][a]` is a list of `{value, prob}` atoms.
    pub reward: Vec<Vec<Vec<Vec<RewardAtom>>>>,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_dist: Option<Vec<f64>>,
    pub r_max: f64,
}

impl TryFrom<RawProcess> for TabularDecisionProcess {
    type Error = OpeError;

    fn try_from(raw: RawProcess) -> Result<Self> {
        let (ns, na) = (raw.n_states, raw.n_actions);
        let mut transition = Vec::with_capacity(raw.transition.len());
        for (k, kernel) in raw.transition.iter().enumerate() {
            if kernel.len() != ns {
                return Err(OpeError::Dimension(format!(
                    "transition[{k}] has {} states, expected {ns}",
                    kernel.len()
                )));
            }
            let mut rows = Vec::with_capacity(ns * na);
            for (s, per_action) in kernel.iter().enumerate() {
                if per_action.len() != na {
                    return Err(OpeError::Dimension(format!(
                        "transition[{k}][{s}] has {} actions, expected {na}",
                        per_action.len()
                    )));
                }
                for row in per_action {
                    if row.len() != ns {
                        return Err(OpeError::Dimension(format!(
                            "transition[{k}][{s}] row has length {}, expected {ns}",
                            row.len()
                        )));
                    }
                    rows.push(SparseRow::from_dense(row));
                }
            }
            transition.push(rows);
        }
        let mut reward = Vec::with_capacity(raw.reward.len());
        for (k, table) in raw.reward.into_iter().enumerate() {
            if table.len() != ns || table.iter().any(|r| r.len() != na) {
                return Err(OpeError::Dimension(format!(
                    "reward[{k}] must be {ns} x {na}"
                )));
            }
            reward.push(
                table
                    .into_iter()
                    .flatten()
                    .map(|support| RewardDist { support })
                    .collect(),
            );
        }
        TabularDecisionProcess::new(
            ns,
            na,
            raw.flavor,
            transition,
            reward,
            raw.initial_dist,
            raw.sampling_dist,
            raw.r_max,
        )
    }
}

impl From<TabularDecisionProcess> for RawProcess {
    fn from(m: TabularDecisionProcess) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        let transition = m
            .transition
            .iter()
            .map(|kernel| {
                (0..ns)
                    .map(|s| {
                        (0..na)
                            .map(|a| {
                                let mut dense = vec![0.0; ns];
                                for (j, p) in kernel[s * na + a].iter() {
                                    dense[j] = p;
                                }
                                dense
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let reward = m
            .reward
            .iter()
            .map(|table| {
                (0..ns)
                    .map(|s| (0..na).map(|a| table[s * na + a].support.clone()).collect())
                    .collect()
            })
            .collect();
        RawProcess {
            n_states: ns,
            n_actions: na,
            flavor: m.flavor,
            transition,
            reward,
            initial_dist: m.initial_dist,
            sampling_dist: m.sampling_dist,
            r_max: m.r_max,
        }
    }
}

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(OpeError::InvalidDistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(OpeError::InvalidDistribution(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl TabularDecisionProcess {
    /// Validates and builds a process from sparse kernels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        flavor: Flavor,
        transition: Vec<Vec<SparseRow>>,
        reward: Vec<Vec<RewardDist>>,
        initial_dist: Vec<f64>,
        sampling_dist: Option<Vec<f64>>,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(OpeError::Dimension("need at least one state and one action".into()));
        }
        let expected_kernels = match flavor {
            Flavor::FiniteHorizon { horizon, time_varying } => {
                if horizon == 0 {
                    return Err(OpeError::Dimension("horizon must be positive".into()));
                }
                if time_varying {
                    horizon
                } else {
                    1
                }
            }
            Flavor::StationaryDiscounted { gamma } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(OpeError::config("gamma", "must lie in (0, 1)"));
                }
                1
            }
        };
        if transition.len() != expected_kernels || reward.len() != expected_kernels {
            return Err(OpeError::Dimension(format!(
                "expected {expected_kernels} transition/reward tables, got {}/{}",
                transition.len(),
                reward.len()
            )));
        }
        if !(r_max >= 0.0) {
            return Err(OpeError::config("r_max", "must be non-negative"));
        }
        for (k, kernel) in transition.iter().enumerate() {
            if kernel.len() != n_states * n_actions {
                return Err(OpeError::Dimension(format!("transition[{k}] has wrong size")));
            }
            for (idx, row) in kernel.iter().enumerate() {
                if row.next.iter().any(|&j| j >= n_states) || row.next.len() != row.prob.len() {
                    return Err(OpeError::Dimension(format!(
                        "transition[{k}] row {idx} references an unknown state"
                    )));
                }
                check_distribution(
                    &row.prob,
                    &format!("transition[{k}][s={}][a={}]", idx / n_actions, idx % n_actions),
                )?;
            }
        }
        for (k, table) in reward.iter().enumerate() {
            if table.len() != n_states * n_actions {
                return Err(OpeError::Dimension(format!("reward[{k}] has wrong size")));
            }
            for (idx, dist) in table.iter().enumerate() {
                let probs: Vec<f64> = dist.support.iter().map(|x| x.prob).collect();
                let what = format!("reward[{k}][s={}][a={}]", idx / n_actions, idx % n_actions);
                check_distribution(&probs, &what)?;
                if dist
                    .support
                    .iter()
                    .any(|x| !(x.value >= 0.0 && x.value <= r_max))
                {
                    return Err(OpeError::InvalidDistribution(format!(
                        "{what} has a value outside [0, r_max={r_max}]"
                    )));
                }
            }
        }
        if initial_dist.len() != n_states {
            return Err(OpeError::Dimension("initial_dist length".into()));
        }
        check_distribution(&initial_dist, "initial_dist")?;
        if let Some(pb) = &sampling_dist {
            if pb.len() != n_states {
                return Err(OpeError::Dimension("sampling_dist length".into()));
            }
            check_distribution(pb, "sampling_dist")?;
        }
        Ok(TabularDecisionProcess {
            n_states,
            n_actions,
            flavor,
            transition,
            reward,
            initial_dist,
            sampling_dist,
            r_max,
        })
    }

    /// Builds a process from dense `[k][s][a][s']` kernels.
    #[allow(clippy::too_many_arguments)]
    pub fn from_dense(
        n_states: usize,
        n_actions: usize,
        flavor: Flavor,
        transition: Vec<Vec<Vec<Vec<f64>>>>,
        reward: Vec<Vec<Vec<RewardDist>>>,
        initial_dist: Vec<f64>,
        sampling_dist: Option<Vec<f64>>,
        r_max: f64,
    ) -> Result<Self> {
        let raw = RawProcess {
            n_states,
            n_actions,
            flavor,
            transition,
            reward: reward
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|row| row.into_iter().map(|d| d.support).collect())
                        .collect()
                })
                .collect(),
            initial_dist,
            sampling_dist,
            r_max,
        };
        raw.try_into()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn sampling_dist(&self) -> Option<&[f64]> {
        self.sampling_dist.as_deref()
    }

    /// Horizon `H` of a finite-horizon process.
    pub fn horizon(&self) -> Result<usize> {
        match self.flavor {
            Flavor::FiniteHorizon { horizon, .. } => Ok(horizon),
            _ => Err(OpeError::WrongFlavor { expected: "finite-horizon" }),
        }
    }

    /// Discount factor of a stationary process.
    pub fn gamma(&self) -> Result<f64> {
        match self.flavor {
            Flavor::StationaryDiscounted { gamma } => Ok(gamma),
            _ => Err(OpeError::WrongFlavor { expected: "stationary discounted" }),
        }
    }

    fn kernel(&self, t: usize) -> usize {
        if self.transition.len() == 1 {
            0
        } else {
            t
        }
    }

    #[inline]
    pub fn next_dist(&self, t: usize, s: usize, a: usize) -> &SparseRow {
        &self.transition[self.kernel(t)][s * self.n_actions + a]
    }

    #[inline]
    pub fn reward_dist(&self, t: usize, s: usize, a: usize) -> &RewardDist {
        &self.reward[self.kernel(t)][s * self.n_actions + a]
    }

    #[inline]
    pub fn mean_reward(&self, t: usize, s: usize, a: usize) -> f64 {
        self.reward_dist(t, s, a).mean()
    }

    /// Dense transition probability `P_t(s' | s, a)`.
    pub fn transition_prob(&self, t: usize, s: usize, a: usize, s_next: usize) -> f64 {
        self.next_dist(t, s, a)
            .iter()
            .find(|&(j, _)| j == s_next)
            .map_or(0.0, |(_, p)| p)
    }

    /// Same dynamics with a different finite horizon. Requires a
    /// time-homogeneous finite-horizon process.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        match self.flavor {
            Flavor::FiniteHorizon { time_varying: false, .. } => {
                let mut out = self.clone();
                if horizon == 0 {
                    return Err(OpeError::Dimension("horizon must be positive".into()));
                }
                out.flavor = Flavor::FiniteHorizon { horizon, time_varying: false };
                Ok(out)
            }
            _ => Err(OpeError::WrongFlavor {
                expected: "time-homogeneous finite-horizon",
            }),
        }
    }

    /// Returns a copy with the given sampling distribution `p_b`.
    pub fn with_sampling_dist(&self, p_b: Vec<f64>) -> Result<Self> {
        if p_b.len() != self.n_states {
            return Err(OpeError::Dimension("sampling_dist length".into()));
        }
        check_distribution(&p_b, "sampling_dist")?;
        let mut out = self.clone();
        out.sampling_dist = Some(p_b);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularDecisionProcess {
        TabularDecisionProcess::from_dense(
            2,
            1,
            Flavor::StationaryDiscounted { gamma: 0.9 },
            vec![vec![vec![vec![0.5, 0.5]], vec![vec![0.1, 0.9]]]],
            vec![vec![
                vec![RewardDist::deterministic(1.0)],
                vec![RewardDist::from_pairs(&[(0.0, 0.5), (2.0, 0.5)])],
            ]],
            vec![1.0, 0.0],
            None,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let m = two_state();
        let back = TabularDecisionProcess::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let err = TabularDecisionProcess::from_dense(
            1,
            1,
            Flavor::FiniteHorizon { horizon: 1, time_varying: false },
            vec![vec![vec![vec![0.9]]]],
            vec![vec![vec![RewardDist::deterministic(0.0)]]],
            vec![1.0],
            None,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, OpeError::InvalidDistribution(_)));
    }

    #[test]
    fn rejects_rewards_above_r_max() {
        let err = TabularDecisionProcess::from_dense(
            1,
            1,
            Flavor::FiniteHorizon { horizon: 1, time_varying: false },
            vec![vec![vec![vec![1.0]]]],
            vec![vec![vec![RewardDist::deterministic(3.0)]]],
            vec![1.0],
            None,
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("r_max"));
    }

    #[test]
    fn reward_moments() {
        let d = RewardDist::from_pairs(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.second_moment(), 2.0);
        assert_eq!(d.variance(), 1.0);
    }

    #[test]
    fn flavor_accessors_check_kind() {
        let m = two_state();
        assert_eq!(m.gamma().unwrap(), 0.9);
        assert!(matches!(m.horizon(), Err(OpeError::WrongFlavor { .. })));
    }
}
