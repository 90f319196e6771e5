//! Per-record scores. Averaging a score over data (plus the fold constant,
//! where one applies) gives the corresponding estimate.

use crate::mdp::data::{Trajectory, TransitionTuple};
use crate::nuisance::NuisanceSet;
use crate::tables::QTable;

/// Tilting, finite horizon:
/// `Σ_t μ̂_t (r_t - v̂_t(s_t)) + μ̂_{t-1} v̂_t(s_t)` with `μ̂_0 := 1`.
pub fn phi_ti1(traj: &Trajectory, n: &NuisanceSet) -> f64 {
    let mut acc = 0.0;
    let mut prev_mu = 1.0;
    for (t, st) in traj.steps.iter().enumerate() {
        let v = n.v(t)[st.s];
        let mu = n.mu(t, st.s, st.a);
        acc += mu * (st.r - v) + prev_mu * v;
        prev_mu = mu;
    }
    acc
}

/// Modified treatment, finite horizon:
/// `Σ_t μ̂_t (r_t - q̂_t(s_t, a_t)) + μ̂_{t-1} q̂_t(s_t, τ_t(s_t, a_t))`.
pub fn phi_mo1(traj: &Trajectory, n: &NuisanceSet) -> f64 {
    let mut acc = 0.0;
    let mut prev_mu = 1.0;
    for (t, st) in traj.steps.iter().enumerate() {
        let mu = n.mu(t, st.s, st.a);
        acc += mu * (st.r - n.q(t).get(st.s, st.a)) + prev_mu * n.q_tau(t, st.s, st.a);
        prev_mu = mu;
    }
    acc
}

/// The naive plug-in: the pre-specified-policy formula
/// `Σ_t μ̂_t (r_t - q̂_t(s_t, a_t)) + μ̂_{t-1} v̂_t(s_t)` applied with estimated
/// `π̂^e`. Its bias is first order in the error of `π̂^b`.
pub fn phi_naive(traj: &Trajectory, n: &NuisanceSet) -> f64 {
    let mut acc = 0.0;
    let mut prev_mu = 1.0;
    for (t, st) in traj.steps.iter().enumerate() {
        let mu = n.mu(t, st.s, st.a);
        acc += mu * (st.r - n.q(t).get(st.s, st.a)) + prev_mu * n.v(t)[st.s];
        prev_mu = mu;
    }
    acc
}

/// `ŵ*(s) η̂(s, a) (r + γ v̂(s') - v̂(s))`
pub fn phi_ti2(x: &TransitionTuple, n: &NuisanceSet, gamma: f64) -> f64 {
    let v = n.v(0);
    n.mu(0, x.s, x.a) * (x.r + gamma * v[x.s_next] - v[x.s])
}

/// `ŵ*(s) η̂(s, a) (r + γ q̂^τ(s', a') - q̂(s, a))`
pub fn phi_mo2(x: &TransitionTuple, n: &NuisanceSet, gamma: f64) -> f64 {
    n.mu(0, x.s, x.a) * (x.r + gamma * n.q_tau(0, x.s_next, x.a_next) - n.q(0).get(x.s, x.a))
}

/// Pre-specified-policy score `ŵ*(s) η̂(s, a) (r + γ v̂(s') - q̂(s, a))`.
pub fn phi_pr2(x: &TransitionTuple, n: &NuisanceSet, gamma: f64) -> f64 {
    n.mu(0, x.s, x.a) * (x.r + gamma * n.v(0)[x.s_next] - n.q(0).get(x.s, x.a))
}

/// `ŵ*(s) η̂(s, a) r`
pub fn phi_mis(x: &TransitionTuple, n: &NuisanceSet) -> f64 {
    n.mu(0, x.s, x.a) * x.r
}

/// Nuisances of the value-direct estimator: a known ratio `η` and directly
/// estimated `v̂`, `ŵ*`.
#[derive(Debug, Clone)]
pub struct V2Nuisance {
    pub eta: QTable,
    pub v: Vec<f64>,
    pub w_star: Vec<f64>,
}

/// `ŵ*(s) η(s, a) (r + γ v̂(s') - v̂(s))`
pub fn phi_v2(x: &TransitionTuple, n: &V2Nuisance, gamma: f64) -> f64 {
    n.w_star[x.s] * n.eta.get(x.s, x.a) * (x.r + gamma * n.v[x.s_next] - n.v[x.s])
}
