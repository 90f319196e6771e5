//! Bounds under the non-Markov model and the curse-of-horizon check.
//!
//! A non-Markov decision process over histories `(s_0, a_0, ..., s_t)` is a
//! time-varying Markov process on the history space, so its bound is the
//! finite-horizon bound of that embedding. For Markovian dynamics the same
//! number follows from the second moments of the cumulative ratio
//! `λ_{t-1} = Π_{k<t} η_k`, which is what [`bound_nmdp`] computes; the
//! embedding is kept as an independent (exponential-size) route.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{bound_finite, finite_cell_term, finite_initial_term, EfficiencyBounds, Estimand, FiniteSetup};
use crate::error::{OpeError, Result};
use crate::mdp::exact::exact_marginals_finite;
use crate::mdp::model::{Flavor, RewardDist, SparseRow, TabularDecisionProcess};
use crate::mdp::policy::StochasticPolicy;
use crate::policies::NaturalPolicySpec;

/// Largest horizon accepted by the history embedding.
pub const NMDP_MAX_HORIZON: usize = 4;

fn nmdp_estimand(spec: &NaturalPolicySpec) -> Estimand {
    if spec.is_tilting() {
        Estimand::Ti1
    } else {
        Estimand::Mo1
    }
}

/// Exact bound of the non-Markov model for a Markovian process, from the
/// recursion `m_{t+1}(s') = Σ_{s,a} m_t(s) π^b(a|s) η_t(s,a)² P_t(s'|s,a)`,
/// `m_0 = p_1`, where `m_t(s) = E_b[λ_{t-1}² 1{s_t = s}]`.
pub fn bound_nmdp(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
) -> Result<EfficiencyBounds> {
    let setup = FiniteSetup::new(mdp, pi_b, spec)?;
    let estimand = nmdp_estimand(spec);
    let ns = mdp.n_states();
    let mut m = mdp.initial_dist().to_vec();
    let mut components = vec![finite_initial_term(mdp, pi_b, spec, &setup.values, estimand)];
    let mut c: f64 = 0.0;
    for t in 0..setup.horizon {
        let eta = &setup.ratios.eta[t];
        let mut acc = 0.0;
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if m[s] == 0.0 {
                continue;
            }
            for (a, &pa) in pi_b.probs(t, s).iter().enumerate() {
                let e = eta.get(s, a);
                if pa == 0.0 || e == 0.0 {
                    continue;
                }
                c = c.max(e);
                let weight = m[s] * pa * e * e;
                acc += weight * finite_cell_term(mdp, pi_b, spec, &setup.values, estimand, t, s, a);
                for (j, p) in mdp.next_dist(t, s, a).iter() {
                    next[j] += weight * p;
                }
            }
        }
        components.push(acc);
        m = next;
    }
    let value = components.iter().sum();
    let pr = bound_finite(mdp, pi_b, spec, Estimand::Pr)?;
    Ok(EfficiencyBounds {
        estimand,
        value,
        components,
        // The pre-specified bound under the Markov model, for reference.
        inflation_vs_prespecified: value - pr.value,
        upper_bound_cap: None,
        c,
        c_prime: setup.ratios.c_prime,
    })
}

/// A finite-horizon process whose states are histories `(s_0, a_0, ..., s_t)`.
#[derive(Debug, Clone)]
pub struct HistoryEmbedding {
    pub mdp: TabularDecisionProcess,
    pub pi_b: StochasticPolicy,
    pub spec: NaturalPolicySpec,
    /// `histories[i]` = `(time, last state)` of embedded state `i`.
    pub histories: Vec<(usize, usize)>,
}

/// Builds the history embedding of a finite-horizon process (`H ≤ 4`).
/// Histories omit rewards: the rewards are conditionally independent of the
/// future given `(s_t, a_t)`.
pub fn history_embedding(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
) -> Result<HistoryEmbedding> {
    let horizon = mdp.horizon()?;
    if horizon > NMDP_MAX_HORIZON {
        return Err(OpeError::config(
            "horizon",
            format!("the history embedding supports H <= {NMDP_MAX_HORIZON}, got {horizon}"),
        ));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    pi_b.check_dims(ns, na, Some(horizon))?;
    spec.check_dims(ns, na)?;
    // Index histories level by level; a history is identified by its parent
    // index, action and new state.
    let mut histories: Vec<(usize, usize)> = (0..ns).map(|s| (0, s)).collect();
    let mut children: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut level: Vec<usize> = (0..ns).collect();
    for t in 0..horizon {
        let mut next_level = Vec::new();
        for &h in &level {
            let s = histories[h].1;
            for a in 0..na {
                for (j, _) in mdp.next_dist(t, s, a).iter() {
                    let id = histories.len();
                    histories.push((t + 1, j));
                    children.insert((h, a, j), id);
                    next_level.push(id);
                }
            }
        }
        level = next_level;
    }
    let n = histories.len();
    let mut initial = vec![0.0; n];
    initial[..ns].copy_from_slice(mdp.initial_dist());
    let mut transition = Vec::with_capacity(horizon);
    let mut reward = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut kernel = Vec::with_capacity(n * na);
        let mut rewards = Vec::with_capacity(n * na);
        for (h, &(th, s)) in histories.iter().enumerate() {
            for a in 0..na {
                if th == t {
                    let row = mdp.next_dist(t, s, a);
                    kernel.push(SparseRow {
                        next: row.iter().map(|(j, _)| children[&(h, a, j)]).collect(),
                        prob: row.prob.clone(),
                    });
                    rewards.push(mdp.reward_dist(t, s, a).clone());
                } else {
                    // Never reached at time t.
                    kernel.push(SparseRow { next: vec![h], prob: vec![1.0] });
                    rewards.push(RewardDist::deterministic(0.0));
                }
            }
        }
        transition.push(kernel);
        reward.push(rewards);
    }
    let embedded = TabularDecisionProcess::new(
        n,
        na,
        Flavor::FiniteHorizon { horizon, time_varying: true },
        transition,
        reward,
        initial,
        None,
        mdp.r_max(),
    )?;
    let tables = (0..horizon)
        .map(|t| histories.iter().flat_map(|&(_, s)| pi_b.probs(t, s).iter().copied()).collect())
        .collect();
    let embedded_pi_b = StochasticPolicy::from_tables(n, na, tables)?;
    let embedded_spec = if spec.is_tilting() {
        let u = (0..horizon).map(|t| spec.u(t).expect("tilting").to_vec()).collect();
        NaturalPolicySpec::tilting_per_time(u)?
    } else {
        let tau = (0..horizon)
            .map(|t| histories.iter().map(|&(_, s)| (0..na).map(|a| spec.tau(t, s, a)).collect()).collect())
            .collect();
        NaturalPolicySpec::modified_per_time(tau)?
    };
    Ok(HistoryEmbedding { mdp: embedded, pi_b: embedded_pi_b, spec: embedded_spec, histories })
}

/// The non-Markov bound computed as the finite-horizon bound of the history
/// embedding.
pub fn bound_nmdp_embedded(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
) -> Result<EfficiencyBounds> {
    let e = history_embedding(mdp, pi_b, spec)?;
    bound_finite(&e.mdp, &e.pi_b, &e.spec, nmdp_estimand(spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurseRow {
    pub horizon: usize,
    /// `min_t exp(E_e[log η_t])`
    pub c_min: f64,
    pub v_min_sq: f64,
    /// `C_min^{H-1} V_min²` (tilting) or `C_min^H V_min²` (modified treatment).
    pub lower_bound: f64,
    pub nmdp_bound: f64,
    pub tmdp_bound: f64,
    /// `C C' R_max² H²`
    pub tmdp_cap: f64,
    /// `nmdp_bound / tmdp_bound`, absent when the Markov bound is zero.
    pub ratio: Option<f64>,
    pub lower_bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurseReport {
    pub tilting: bool,
    pub rows: Vec<CurseRow>,
}

/// `exp(E[log f])` under weights `p`; zero if `f` vanishes on the support.
fn geometric_mean(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut acc = 0.0;
    for (p, f) in pairs {
        if p == 0.0 {
            continue;
        }
        if f <= 0.0 {
            return 0.0;
        }
        acc += p * f.ln();
    }
    acc.exp()
}

/// For each horizon, compares the non-Markov bound with its geometric lower
/// bound and with the Markov bound and its polynomial cap. Expectations in
/// `C_min` and `V_min` are under the evaluation-policy distribution.
pub fn curse_check(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    horizons: &[usize],
) -> Result<CurseReport> {
    if horizons.is_empty() {
        return Err(OpeError::config("horizons", "must be nonempty"));
    }
    let estimand = nmdp_estimand(spec);
    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let m = mdp.with_horizon(h)?;
        let setup = FiniteSetup::new(&m, pi_b, spec)?;
        let d_e = exact_marginals_finite(&m, &setup.pi_e)?;
        let ns = m.n_states();
        let na = m.n_actions();
        let mut c_min = f64::INFINITY;
        let mut v_min_sq = f64::INFINITY;
        for t in 0..h {
            let eta = &setup.ratios.eta[t];
            let cells = || {
                (0..ns).flat_map(move |s| (0..na).map(move |a| (s, a)))
            };
            let c_t = geometric_mean(cells().map(|(s, a)| (d_e[t][s] * setup.pi_e.prob(t, s, a), eta.get(s, a))));
            c_min = c_min.min(c_t);
            let cell = |s: usize, a: usize| {
                let e = eta.get(s, a);
                if estimand == Estimand::Ti1 {
                    e * e * finite_cell_term(&m, pi_b, spec, &setup.values, estimand, t, s, a)
                } else {
                    finite_cell_term(&m, pi_b, spec, &setup.values, estimand, t, s, a)
                }
            };
            let v_t = if estimand == Estimand::Ti1 {
                let v_state: Vec<f64> =
                    (0..ns).map(|s| (0..na).map(|a| pi_b.prob(t, s, a) * cell(s, a)).sum()).collect();
                geometric_mean((0..ns).map(|s| (d_e[t][s], v_state[s])))
            } else {
                geometric_mean(cells().map(|(s, a)| (d_e[t][s] * setup.pi_e.prob(t, s, a), cell(s, a))))
            };
            v_min_sq = v_min_sq.min(v_t);
        }
        let exponent = if estimand == Estimand::Ti1 { h - 1 } else { h } as i32;
        let lower_bound = c_min.powi(exponent) * v_min_sq;
        let nmdp = bound_nmdp(&m, pi_b, spec)?.value;
        let tmdp = bound_finite(&m, pi_b, spec, estimand)?;
        rows.push(CurseRow {
            horizon: h,
            c_min,
            v_min_sq,
            lower_bound,
            nmdp_bound: nmdp,
            tmdp_bound: tmdp.value,
            tmdp_cap: tmdp.upper_bound_cap.unwrap_or_default(),
            ratio: (tmdp.value > 0.0).then(|| nmdp / tmdp.value),
            lower_bound_holds: nmdp >= lower_bound * (1.0 - 1e-12),
        });
    }
    Ok(CurseReport { tilting: spec.is_tilting(), rows })
}
