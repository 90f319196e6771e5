//! Efficient influence functions at the true nuisances and exact efficiency
//! bounds.
//!
//! Finite-horizon bounds are reported as `H + 1` components: the
//! initial-state term (`var[v_0(s_0)]`, or `var[q^τ_0(s_0, a_0)]` for modified
//! treatment policies) followed by one term per step `t = 0..H-1`.

mod nmdp;

use serde::{Deserialize, Serialize};

pub use nmdp::{bound_nmdp, bound_nmdp_embedded, curse_check, history_embedding, CurseReport, CurseRow, HistoryEmbedding, NMDP_MAX_HORIZON};

use crate::error::{OpeError, Result};
use crate::estimators::{phi_mo1, phi_mo2, phi_naive, phi_pr2, phi_ti1, phi_ti2};
use crate::mdp::data::{Trajectory, TransitionTuple};
use crate::mdp::exact::{exact_marginals_finite, exact_q_v_discounted, exact_q_v_finite, FiniteValues};
use crate::mdp::model::{SparseRow, TabularDecisionProcess};
use crate::mdp::policy::StochasticPolicy;
use crate::nuisance::NuisanceSet;
use crate::policies::{compute_ratios, compute_stationary_ratios, NaturalPolicySpec, RatioSet};
use crate::tables::QTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "TI1")]
    Ti1,
    #[serde(rename = "MO1")]
    Mo1,
    /// Pre-specified evaluation policy, finite horizon.
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "TI2")]
    Ti2,
    #[serde(rename = "MO2")]
    Mo2,
    /// Pre-specified evaluation policy, discounted.
    #[serde(rename = "PR2")]
    Pr2,
    /// Value-direct estimator with a known behavior policy.
    #[serde(rename = "V2")]
    V2,
}

impl Estimand {
    pub fn is_finite(self) -> bool {
        matches!(self, Estimand::Ti1 | Estimand::Mo1 | Estimand::Pr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBounds {
    pub estimand: Estimand,
    /// `Υ`
    pub value: f64,
    pub components: Vec<f64>,
    /// `Υ - Υ_PR` for the matching pre-specified-policy bound.
    pub inflation_vs_prespecified: f64,
    /// `C C' R_max² H²` for finite horizons.
    pub upper_bound_cap: Option<f64>,
    pub c: f64,
    pub c_prime: f64,
}

/// Variance of `f` under a sparse distribution.
fn sparse_var(row: &SparseRow, f: &[f64]) -> f64 {
    let mean = row.expect(f);
    row.iter().map(|(j, p)| p * (f[j] - mean).powi(2)).sum()
}

fn dense_var(p: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mean: f64 = p.iter().enumerate().map(|(i, &x)| x * f(i)).sum();
    p.iter().enumerate().map(|(i, &x)| x * (f(i) - mean).powi(2)).sum()
}

/// `var[q^τ(s', a') | s, a]` with `s' ~ row`, `a' ~ π^b(·|s', t_next)`.
fn var_q_tau_next(row: &SparseRow, q: &QTable, spec: &NaturalPolicySpec, pi_b: &StochasticPolicy, t_next: usize) -> f64 {
    let mut mean = 0.0;
    let mut pairs = Vec::new();
    for (j, p) in row.iter() {
        for (a, &pa) in pi_b.probs(t_next, j).iter().enumerate() {
            if pa > 0.0 {
                let x = q.get(j, spec.tau(t_next, j, a));
                mean += p * pa * x;
                pairs.push((p * pa, x));
            }
        }
    }
    pairs.iter().map(|&(w, x)| w * (x - mean).powi(2)).sum()
}

/// `var[q^τ_t(s, a)]` under `p(s) π^b(a|s, t)`.
fn var_q_tau_initial(p: &[f64], q: &QTable, spec: &NaturalPolicySpec, pi_b: &StochasticPolicy, t: usize) -> f64 {
    let mut pairs = Vec::new();
    for (s, &ps) in p.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (a, &pa) in pi_b.probs(t, s).iter().enumerate() {
            if pa > 0.0 {
                pairs.push((ps * pa, q.get(s, spec.tau(t, s, a))));
            }
        }
    }
    let mean: f64 = pairs.iter().map(|&(w, x)| w * x).sum();
    pairs.iter().map(|&(w, x)| w * (x - mean).powi(2)).sum()
}

/// Exact finite-horizon quantities shared by the bounds.
pub(crate) struct FiniteSetup {
    pub pi_e: StochasticPolicy,
    pub values: FiniteValues,
    pub d_b: Vec<Vec<f64>>,
    pub ratios: RatioSet,
    pub horizon: usize,
}

impl FiniteSetup {
    pub fn new(mdp: &TabularDecisionProcess, pi_b: &StochasticPolicy, spec: &NaturalPolicySpec) -> Result<Self> {
        let horizon = mdp.horizon()?;
        pi_b.check_dims(mdp.n_states(), mdp.n_actions(), Some(horizon))?;
        spec.check_dims(mdp.n_states(), mdp.n_actions())?;
        let pi_e = spec.evaluation_policy(pi_b)?;
        let values = exact_q_v_finite(mdp, &pi_e)?;
        let d_b = exact_marginals_finite(mdp, pi_b)?;
        let ratios = compute_ratios(mdp, pi_b, &pi_e)?;
        Ok(FiniteSetup { pi_e, values, d_b, ratios, horizon })
    }
}

#[allow(clippy::too_many_arguments)]
/// Per-`(t, s, a)` conditional variance term of a finite-horizon EIF, before
/// weighting by the squared ratio.
pub(crate) fn finite_cell_term(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    values: &FiniteValues,
    estimand: Estimand,
    t: usize,
    s: usize,
    a: usize,
) -> f64 {
    let horizon = values.q.len();
    let row = mdp.next_dist(t, s, a);
    let var_r = mdp.reward_dist(t, s, a).variance();
    match estimand {
        Estimand::Pr => var_r + sparse_var(row, &values.v[t + 1]),
        Estimand::Ti1 => {
            var_r + sparse_var(row, &values.v[t + 1]) + (values.q[t].get(s, a) - values.v[t][s]).powi(2)
        }
        Estimand::Mo1 => {
            let next = if t + 1 < horizon { var_q_tau_next(row, &values.q[t + 1], spec, pi_b, t + 1) } else { 0.0 };
            var_r + next
        }
        _ => unreachable!("finite estimands only"),
    }
}

/// Initial-state component of a finite-horizon bound.
pub(crate) fn finite_initial_term(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    values: &FiniteValues,
    estimand: Estimand,
) -> f64 {
    match estimand {
        Estimand::Mo1 => var_q_tau_initial(mdp.initial_dist(), &values.q[0], spec, pi_b, 0),
        _ => dense_var(mdp.initial_dist(), |s| values.v[0][s]),
    }
}

fn finite_components(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    setup: &FiniteSetup,
    estimand: Estimand,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(setup.horizon + 1);
    out.push(finite_initial_term(mdp, pi_b, spec, &setup.values, estimand));
    for t in 0..setup.horizon {
        let mut acc = 0.0;
        for (s, &d) in setup.d_b[t].iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (a, &pa) in pi_b.probs(t, s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let mu = setup.ratios.mu[t].get(s, a);
                if mu == 0.0 {
                    continue;
                }
                acc += d * pa * mu * mu * finite_cell_term(mdp, pi_b, spec, &setup.values, estimand, t, s, a);
            }
        }
        out.push(acc);
    }
    out
}

/// Exact finite-horizon efficiency bound (`TI1`, `MO1` or `PR`).
pub fn bound_finite(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    estimand: Estimand,
) -> Result<EfficiencyBounds> {
    if !estimand.is_finite() {
        return Err(OpeError::config("estimand", "needs one of TI1, MO1, PR"));
    }
    check_spec_kind(spec, estimand)?;
    let setup = FiniteSetup::new(mdp, pi_b, spec)?;
    let components = finite_components(mdp, pi_b, spec, &setup, estimand);
    let value = components.iter().sum();
    let pr: f64 = if estimand == Estimand::Pr {
        value
    } else {
        finite_components(mdp, pi_b, spec, &setup, Estimand::Pr).iter().sum()
    };
    let h = setup.horizon as f64;
    let (c, c_prime) = (setup.ratios.c, setup.ratios.c_prime);
    Ok(EfficiencyBounds {
        estimand,
        value,
        components,
        inflation_vs_prespecified: value - pr,
        upper_bound_cap: Some(c * c_prime * mdp.r_max().powi(2) * h * h),
        c,
        c_prime,
    })
}

fn check_spec_kind(spec: &NaturalPolicySpec, estimand: Estimand) -> Result<()> {
    let needs_tilting = match estimand {
        Estimand::Ti1 | Estimand::Ti2 | Estimand::V2 => Some(true),
        Estimand::Mo1 | Estimand::Mo2 => Some(false),
        Estimand::Pr | Estimand::Pr2 => None,
    };
    match needs_tilting {
        Some(t) if t != spec.is_tilting() => Err(OpeError::InvalidSpec(format!(
            "{estimand:?} needs a {} policy",
            if t { "tilting" } else { "modified treatment" }
        ))),
        _ => Ok(()),
    }
}

/// Exact discounted efficiency bound (`TI2`, `MO2`, `PR2`, or `V2`, whose
/// bound equals that of `TI2`) for tuples sampled from
/// `p_b(s) π^b(a|s) p(r|s,a) P(s'|s,a) π^b(a'|s')`.
pub fn bound_discounted(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    p_b: &[f64],
    estimand: Estimand,
) -> Result<EfficiencyBounds> {
    if estimand.is_finite() {
        return Err(OpeError::config("estimand", "needs one of TI2, MO2, PR2, V2"));
    }
    check_spec_kind(spec, estimand)?;
    let gamma = mdp.gamma()?;
    spec.check_dims(mdp.n_states(), mdp.n_actions())?;
    let pi_e = spec.evaluation_policy(pi_b)?;
    let values = exact_q_v_discounted(mdp, &pi_e)?;
    let ratios = compute_stationary_ratios(mdp, pi_b, &pi_e, p_b)?;
    let mut value = 0.0;
    let mut pr = 0.0;
    for (s, &ps) in p_b.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (a, &pa) in pi_b.probs(0, s).iter().enumerate() {
            let mu = ratios.mu_star.get(s, a);
            if pa == 0.0 || mu == 0.0 {
                continue;
            }
            let row = mdp.next_dist(0, s, a);
            let var_r = mdp.reward_dist(0, s, a).variance();
            let base = var_r + gamma * gamma * sparse_var(row, &values.v);
            let term = match estimand {
                Estimand::Pr2 => base,
                Estimand::Ti2 | Estimand::V2 => base + (values.q.get(s, a) - values.v[s]).powi(2),
                Estimand::Mo2 => var_r + gamma * gamma * var_q_tau_next(row, &values.q, spec, pi_b, 0),
                _ => unreachable!(),
            };
            let w = ps * pa * mu * mu;
            value += w * term;
            pr += w * base;
        }
    }
    Ok(EfficiencyBounds {
        estimand,
        value,
        components: vec![value],
        inflation_vs_prespecified: value - pr,
        upper_bound_cap: None,
        c: ratios.c,
        c_prime: ratios.c_prime,
    })
}

/// EIF of a finite-horizon estimand at the (true) nuisances `n`, with `-J`
/// included.
pub fn eif_trajectory(traj: &Trajectory, n: &NuisanceSet, estimand: Estimand, j: f64) -> Result<f64> {
    let phi = match estimand {
        Estimand::Ti1 => phi_ti1(traj, n),
        Estimand::Mo1 => phi_mo1(traj, n),
        Estimand::Pr => phi_naive(traj, n),
        _ => return Err(OpeError::config("estimand", "needs one of TI1, MO1, PR")),
    };
    Ok(phi - j)
}

/// EIF of a discounted estimand at the (true) nuisances `n`. At the true
/// nuisances the initial-state term of the estimator equals `J(γ)`, so the
/// EIF is the per-tuple score itself.
pub fn eif_transition(x: &TransitionTuple, n: &NuisanceSet, estimand: Estimand, gamma: f64) -> Result<f64> {
    Ok(match estimand {
        Estimand::Ti2 | Estimand::V2 => phi_ti2(x, n, gamma),
        Estimand::Mo2 => phi_mo2(x, n, gamma),
        Estimand::Pr2 => phi_pr2(x, n, gamma),
        _ => return Err(OpeError::config("estimand", "needs one of TI2, MO2, PR2, V2")),
    })
}
