//! Exact dynamic-programming oracles: q/v-functions, values, state marginals
//! and discounted visitation distributions.

use nalgebra::DMatrix;

use crate::error::{OpeError, Result};
use crate::linalg::{fixed_point, solve_dense, DENSE_LIMIT};
use crate::mdp::model::{TabularDecisionProcess, SOLVER_TOL};
use crate::mdp::policy::StochasticPolicy;
use crate::tables::QTable;

/// Finite-horizon q- and v-functions. `q` has `H` tables; `v` has `H + 1`
/// entries with `v[H] ≡ 0`.
#[derive(Debug, Clone)]
pub struct FiniteValues {
    pub q: Vec<QTable>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DiscountedValues {
    pub q: QTable,
    pub v: Vec<f64>,
}

/// `Σ_a π(a|s) f(s, a)`
pub fn policy_average(policy: &StochasticPolicy, t: usize, q: &QTable) -> Vec<f64> {
    (0..q.n_states())
        .map(|s| {
            policy
                .probs(t, s)
                .iter()
                .zip(q.row(s))
                .map(|(p, x)| p * x)
                .sum()
        })
        .collect()
}

/// Backward induction with `q_{H+1} ≡ 0`.
pub fn exact_q_v_finite(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<FiniteValues> {
    let horizon = mdp.horizon()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    policy.check_dims(ns, na, Some(horizon))?;
    let mut q = vec![QTable::zeros(ns, na); horizon];
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        let next_v = &v[t + 1];
        q[t] = QTable::from_fn(ns, na, |s, a| {
            mdp.mean_reward(t, s, a) + mdp.next_dist(t, s, a).expect(next_v)
        });
        v[t] = policy_average(policy, t, &q[t]);
    }
    Ok(FiniteValues { q, v })
}

pub fn exact_value_finite(mdp: &TabularDecisionProcess, policy: &StochasticPolicy) -> Result<f64> {
    let values = exact_q_v_finite(mdp, policy)?;
    Ok(dot(mdp.initial_dist(), &values.v[0]))
}

/// Forward recursion for `p_π(s_t)`, `t = 1..H+1` (index `H` is the terminal state).
pub fn exact_marginals_finite(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<Vec<Vec<f64>>> {
    let horizon = mdp.horizon()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    policy.check_dims(ns, na, Some(horizon))?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(mdp.initial_dist().to_vec());
    for t in 0..horizon {
        let cur = &out[t];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if cur[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = cur[s] * policy.prob(t, s, a);
                if w == 0.0 {
                    continue;
                }
                for (j, p) in mdp.next_dist(t, s, a).iter() {
                    next[j] += w * p;
                }
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// Applies `x ↦ P_π x` (`x` indexed by next state).
fn apply_p_pi(mdp: &TabularDecisionProcess, policy: &StochasticPolicy, x: &[f64], out: &mut [f64]) {
    for s in 0..mdp.n_states() {
        let mut acc = 0.0;
        for (a, &pa) in policy.probs(0, s).iter().enumerate() {
            if pa != 0.0 {
                acc += pa * mdp.next_dist(0, s, a).expect(x);
            }
        }
        out[s] = acc;
    }
}

/// Applies `x ↦ P_πᵀ x` (`x` indexed by current state).
fn apply_p_pi_transpose(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    x: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for s in 0..mdp.n_states() {
        if x[s] == 0.0 {
            continue;
        }
        for (a, &pa) in policy.probs(0, s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (j, p) in mdp.next_dist(0, s, a).iter() {
                out[j] += x[s] * pa * p;
            }
        }
    }
}

fn p_pi_dense(mdp: &TabularDecisionProcess, policy: &StochasticPolicy) -> DMatrix<f64> {
    let ns = mdp.n_states();
    let mut m = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for (a, &pa) in policy.probs(0, s).iter().enumerate() {
            for (j, p) in mdp.next_dist(0, s, a).iter() {
                m[(s, j)] += pa * p;
            }
        }
    }
    m
}

/// Solves `v = r_π + γ P_π v`, then `q = r̄ + γ P v`.
pub fn exact_q_v_discounted(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<DiscountedValues> {
    let gamma = mdp.gamma()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    policy.check_dims(ns, na, None)?;
    let r_bar = QTable::from_fn(ns, na, |s, a| mdp.mean_reward(0, s, a));
    let r_pi = policy_average(policy, 0, &r_bar);
    let v = if ns <= DENSE_LIMIT {
        let a = DMatrix::identity(ns, ns) - p_pi_dense(mdp, policy) * gamma;
        solve_dense(a, &r_pi)?.0
    } else {
        fixed_point(&r_pi, |x, out| {
            apply_p_pi(mdp, policy, x, out);
            out.iter_mut().for_each(|o| *o *= gamma);
        })?
    };
    let q = QTable::from_fn(ns, na, |s, a| r_bar.get(s, a) + gamma * mdp.next_dist(0, s, a).expect(&v));
    let values = DiscountedValues { q, v };
    let residual = bellman_residual(mdp, policy, &values.q)?;
    debug_assert!(residual <= SOLVER_TOL * (1.0 + values.q.max().abs()), "residual {residual}");
    Ok(values)
}

/// Max-norm residual of `q = r̄ + γ P Π q`.
pub fn bellman_residual(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
    q: &QTable,
) -> Result<f64> {
    let gamma = mdp.gamma()?;
    let v = policy_average(policy, 0, q);
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let rhs = mdp.mean_reward(0, s, a) + gamma * mdp.next_dist(0, s, a).expect(&v);
            worst = worst.max((rhs - q.get(s, a)).abs());
        }
    }
    Ok(worst)
}

/// `J(γ) = (1-γ) Σ_s p_e^(1)(s) v(s)`, with `p_e^(1)` the initial distribution.
pub fn exact_value_discounted(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<f64> {
    let gamma = mdp.gamma()?;
    let values = exact_q_v_discounted(mdp, policy)?;
    Ok((1.0 - gamma) * dot(mdp.initial_dist(), &values.v))
}

/// `γ`-discounted average visitation `(1-γ) Σ_t γ^{t-1} p^(t)`, solved from
/// `p = (1-γ) p^(1) + γ P_πᵀ p`.
pub fn exact_discounted_visitation(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<Vec<f64>> {
    let gamma = mdp.gamma()?;
    let ns = mdp.n_states();
    policy.check_dims(ns, mdp.n_actions(), None)?;
    let b: Vec<f64> = mdp.initial_dist().iter().map(|p| (1.0 - gamma) * p).collect();
    if ns <= DENSE_LIMIT {
        let a = DMatrix::identity(ns, ns) - p_pi_dense(mdp, policy).transpose() * gamma;
        Ok(solve_dense(a, &b)?.0)
    } else {
        fixed_point(&b, |x, out| {
            apply_p_pi_transpose(mdp, policy, x, out);
            out.iter_mut().for_each(|o| *o *= gamma);
        })
    }
}

/// Stationary state distribution of the chain `P_π`.
///
/// Assumes the chain has a unique stationary distribution; a reducible chain
/// yields a singular system (dense path) or a start-dependent limit.
pub fn stationary_distribution(
    mdp: &TabularDecisionProcess,
    policy: &StochasticPolicy,
) -> Result<Vec<f64>> {
    let ns = mdp.n_states();
    policy.check_dims(ns, mdp.n_actions(), None)?;
    if ns <= DENSE_LIMIT {
        let mut a = DMatrix::identity(ns, ns) - p_pi_dense(mdp, policy).transpose();
        for j in 0..ns {
            a[(ns - 1, j)] = 1.0;
        }
        let mut b = vec![0.0; ns];
        b[ns - 1] = 1.0;
        let (mut d, _) = solve_dense(a, &b)?;
        d.iter_mut().for_each(|x| *x = x.max(0.0));
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|x| *x /= total);
        Ok(d)
    } else {
        // Lazy power iteration avoids periodicity.
        let mut d = vec![1.0 / ns as f64; ns];
        let mut next = vec![0.0; ns];
        for _ in 0..1_000_000 {
            apply_p_pi_transpose(mdp, policy, &d, &mut next);
            let mut delta: f64 = 0.0;
            for i in 0..ns {
                let x = 0.5 * (d[i] + next[i]);
                delta = delta.max((x - d[i]).abs());
                d[i] = x;
            }
            if delta < 1e-15 {
                return Ok(d);
            }
        }
        Err(OpeError::NotConverged { iterations: 1_000_000, residual: f64::NAN })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::model::{Flavor, RewardDist};

    fn constant_reward_chain(horizon: usize, value: f64) -> TabularDecisionProcess {
        TabularDecisionProcess::from_dense(
            2,
            2,
            Flavor::FiniteHorizon { horizon, time_varying: false },
            vec![vec![
                vec![vec![0.3, 0.7], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            ]],
            vec![vec![vec![RewardDist::deterministic(value); 2]; 2]],
            vec![0.4, 0.6],
            None,
            value,
        )
        .unwrap()
    }

    #[test]
    fn constant_reward_gives_h_times_r_max() {
        let mdp = constant_reward_chain(4, 2.5);
        let pi = StochasticPolicy::stationary(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let vals = exact_q_v_finite(&mdp, &pi).unwrap();
        for s in 0..2 {
            assert!((vals.v[0][s] - 10.0).abs() < 1e-12);
        }
        assert!((exact_value_finite(&mdp, &pi).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_one_q_is_mean_reward() {
        let mdp = TabularDecisionProcess::from_dense(
            1,
            2,
            Flavor::FiniteHorizon { horizon: 1, time_varying: false },
            vec![vec![vec![vec![1.0], vec![1.0]]]],
            vec![vec![vec![RewardDist::deterministic(1.0), RewardDist::deterministic(3.0)]]],
            vec![1.0],
            None,
            3.0,
        )
        .unwrap();
        let pi = StochasticPolicy::stationary(vec![vec![0.25, 0.75]]).unwrap();
        let vals = exact_q_v_finite(&mdp, &pi).unwrap();
        assert_eq!(vals.q[0].row(0), &[1.0, 3.0]);
        assert!((vals.v[0][0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn marginals_sum_to_one_and_start_at_p1() {
        let mdp = constant_reward_chain(3, 1.0);
        let pi = StochasticPolicy::stationary(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let m = exact_marginals_finite(&mdp, &pi).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0], vec![0.4, 0.6]);
        for slice in &m {
            assert!((slice.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_cycle_rotates_point_mass() {
        let mdp = TabularDecisionProcess::from_dense(
            3,
            1,
            Flavor::FiniteHorizon { horizon: 3, time_varying: false },
            vec![vec![
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0]],
                vec![vec![1.0, 0.0, 0.0]],
            ]],
            vec![vec![vec![RewardDist::deterministic(0.0)]; 3]],
            vec![1.0, 0.0, 0.0],
            None,
            1.0,
        )
        .unwrap();
        let m = exact_marginals_finite(&mdp, &StochasticPolicy::uniform(3, 1)).unwrap();
        assert_eq!(m[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(m[2], vec![0.0, 0.0, 1.0]);
        assert_eq!(m[3], vec![1.0, 0.0, 0.0]);
    }

    fn one_state_discounted(gamma: f64, c: f64) -> TabularDecisionProcess {
        TabularDecisionProcess::from_dense(
            1,
            1,
            Flavor::StationaryDiscounted { gamma },
            vec![vec![vec![vec![1.0]]]],
            vec![vec![vec![RewardDist::deterministic(c)]]],
            vec![1.0],
            None,
            c,
        )
        .unwrap()
    }

    #[test]
    fn one_state_geometric_series() {
        let mdp = one_state_discounted(0.9, 2.0);
        let pi = StochasticPolicy::uniform(1, 1);
        let vals = exact_q_v_discounted(&mdp, &pi).unwrap();
        assert!((vals.q.get(0, 0) - 20.0).abs() < 1e-12);
        assert!((exact_value_discounted(&mdp, &pi).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(exact_discounted_visitation(&mdp, &pi).unwrap(), vec![1.0]);
    }

    #[test]
    fn symmetric_mdp_has_constant_value() {
        let mdp = TabularDecisionProcess::from_dense(
            2,
            2,
            Flavor::StationaryDiscounted { gamma: 0.8 },
            vec![vec![
                vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                vec![vec![0.1, 0.9], vec![0.9, 0.1]],
            ]],
            vec![vec![
                vec![RewardDist::deterministic(1.0), RewardDist::deterministic(0.0)],
                vec![RewardDist::deterministic(0.0), RewardDist::deterministic(1.0)],
            ]],
            vec![0.5, 0.5],
            None,
            1.0,
        )
        .unwrap();
        // The relabeling s -> 1-s, a -> 1-a is a symmetry; a uniform policy respects it.
        let vals = exact_q_v_discounted(&mdp, &StochasticPolicy::uniform(2, 2)).unwrap();
        assert!((vals.v[0] - vals.v[1]).abs() < 1e-12);
    }

    #[test]
    fn wrong_flavor_is_rejected() {
        let mdp = one_state_discounted(0.5, 1.0);
        assert!(exact_q_v_finite(&mdp, &StochasticPolicy::uniform(1, 1)).is_err());
    }
}
