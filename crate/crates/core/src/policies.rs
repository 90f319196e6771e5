//! Natural stochastic policies (tilting and modified treatment) and the
//! density ratios `η`, `λ`, `w`, `μ`, `w*`, `μ*`.

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::data::Trajectory;
use crate::mdp::exact::{exact_discounted_visitation, exact_marginals_finite};
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;
use crate::tables::QTable;

/// An evaluation policy defined as a deviation from the behavior policy.
///
/// Either component may hold one entry (applied at every time step) or one
/// entry per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalPolicySpec {
    kind: SpecKind,
}

#[derive(Debug, Clone, PartialEq)]
enum SpecKind {
    /// `u[t][a]`
    Tilting(Vec<Vec<f64>>),
    /// `tau[t][s][a]` and its inverse.
    Modified { tau: Vec<Vec<Vec<usize>>>, inv: Vec<Vec<Vec<usize>>> },
}

impl NaturalPolicySpec {
    /// Tilting weights shared by every time step.
    pub fn tilting(u: Vec<f64>) -> Result<Self> {
        Self::tilting_per_time(vec![u])
    }

    pub fn tilting_per_time(u: Vec<Vec<f64>>) -> Result<Self> {
        if u.is_empty() || u.iter().any(Vec::is_empty) {
            return Err(OpeError::InvalidSpec("tilting weights are empty".into()));
        }
        let n_actions = u[0].len();
        for (t, row) in u.iter().enumerate() {
            if row.len() != n_actions {
                return Err(OpeError::InvalidSpec(format!("u[{t}] has the wrong length")));
            }
            if let Some(a) = row.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(OpeError::InvalidSpec(format!(
                    "tilting weight u[{t}][{a}] = {} is not strictly positive",
                    row[a]
                )));
            }
        }
        Ok(NaturalPolicySpec { kind: SpecKind::Tilting(u) })
    }

    /// `u(a) = ⌈(a+1)/2⌉` for 0-based actions, i.e. `1, 1, 2, 2, 3, 3, ...`.
    pub fn ceil_half(n_actions: usize) -> Self {
        let u = (0..n_actions).map(|a| (a + 1).div_ceil(2) as f64).collect();
        NaturalPolicySpec { kind: SpecKind::Tilting(vec![u]) }
    }

    /// Action permutation `tau[s][a]` shared by every time step.
    pub fn modified(tau: Vec<Vec<usize>>) -> Result<Self> {
        Self::modified_per_time(vec![tau])
    }

    pub fn modified_per_time(tau: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if tau.is_empty() || tau[0].is_empty() {
            return Err(OpeError::InvalidSpec("treatment map is empty".into()));
        }
        let n_states = tau[0].len();
        let n_actions = tau[0][0].len();
        let mut inv = Vec::with_capacity(tau.len());
        for (t, table) in tau.iter().enumerate() {
            if table.len() != n_states {
                return Err(OpeError::InvalidSpec(format!("tau[{t}] has the wrong number of states")));
            }
            let mut inv_t = Vec::with_capacity(n_states);
            for (s, row) in table.iter().enumerate() {
                if row.len() != n_actions {
                    return Err(OpeError::InvalidSpec(format!("tau[{t}][{s}] has the wrong length")));
                }
                let mut inverse = vec![usize::MAX; n_actions];
                for (a, &b) in row.iter().enumerate() {
                    if b >= n_actions || inverse[b] != usize::MAX {
                        return Err(OpeError::InvalidSpec(format!(
                            "tau[{t}][{s}] is not a bijection on the action set"
                        )));
                    }
                    inverse[b] = a;
                }
                inv_t.push(inverse);
            }
            inv.push(inv_t);
        }
        Ok(NaturalPolicySpec { kind: SpecKind::Modified { tau, inv } })
    }

    /// `tau(s, a) = (s + a) mod modulus`; a bijection only when the modulus
    /// equals the number of actions.
    pub fn shift_mod(n_states: usize, n_actions: usize, modulus: usize) -> Result<Self> {
        if modulus != n_actions {
            return Err(OpeError::InvalidSpec(format!(
                "shift_mod modulus {modulus} must equal the number of actions {n_actions}"
            )));
        }
        Self::modified(
            (0..n_states)
                .map(|s| (0..n_actions).map(|a| (s + a) % modulus).collect())
                .collect(),
        )
    }

    pub fn identity_treatment(n_states: usize, n_actions: usize) -> Self {
        Self::modified(vec![(0..n_actions).collect(); n_states]).expect("identity is a bijection")
    }

    pub fn is_tilting(&self) -> bool {
        matches!(self.kind, SpecKind::Tilting(_))
    }

    fn n_times(&self) -> usize {
        match &self.kind {
            SpecKind::Tilting(u) => u.len(),
            SpecKind::Modified { tau, .. } => tau.len(),
        }
    }

    #[inline]
    fn pick<T>(items: &[T], t: usize) -> &T {
        if items.len() == 1 {
            &items[0]
        } else {
            &items[t]
        }
    }

    /// Tilting weights at time `t`, or `None` for a modified-treatment spec.
    pub fn u(&self, t: usize) -> Option<&[f64]> {
        match &self.kind {
            SpecKind::Tilting(u) => Some(Self::pick(u, t)),
            SpecKind::Modified { .. } => None,
        }
    }

    /// `τ_t(s, a)`; the identity for tilting specs.
    #[inline]
    pub fn tau(&self, t: usize, s: usize, a: usize) -> usize {
        match &self.kind {
            SpecKind::Tilting(_) => a,
            SpecKind::Modified { tau, .. } => Self::pick(tau, t)[s][a],
        }
    }

    /// `τ_t⁻¹(s, a)`; the identity for tilting specs.
    #[inline]
    pub fn tau_inv(&self, t: usize, s: usize, a: usize) -> usize {
        match &self.kind {
            SpecKind::Tilting(_) => a,
            SpecKind::Modified { inv, .. } => Self::pick(inv, t)[s][a],
        }
    }

    pub fn check_dims(&self, n_states: usize, n_actions: usize) -> Result<()> {
        let ok = match &self.kind {
            SpecKind::Tilting(u) => u[0].len() == n_actions,
            SpecKind::Modified { tau, .. } => tau[0].len() == n_states && tau[0][0].len() == n_actions,
        };
        if ok {
            Ok(())
        } else {
            Err(OpeError::Dimension(format!(
                "policy spec does not match a {n_states} x {n_actions} process"
            )))
        }
    }

    /// Explicit (token-free) configuration form of this spec.
    pub fn to_config(&self) -> PolicySpecConfig {
        match &self.kind {
            SpecKind::Tilting(u) => PolicySpecConfig::Tilting { u: TiltConfig::PerTime(u.clone()) },
            SpecKind::Modified { tau, .. } => {
                PolicySpecConfig::ModifiedTreatment { tau: TauConfig::PerTime(tau.clone()), modulus: None }
            }
        }
    }

    /// Builds `π^e` from `π^b`.
    pub fn evaluation_policy(&self, pi_b: &StochasticPolicy) -> Result<StochasticPolicy> {
        self.check_dims(pi_b.n_states(), pi_b.n_actions())?;
        let (ns, na) = (pi_b.n_states(), pi_b.n_actions());
        let n_tables = match (pi_b.n_tables(), self.n_times()) {
            (1, k) | (k, 1) => k,
            (a, b) if a == b => a,
            (a, b) => {
                return Err(OpeError::Dimension(format!(
                    "behavior policy has {a} time steps, policy spec has {b}"
                )))
            }
        };
        let mut tables = Vec::with_capacity(n_tables);
        for t in 0..n_tables {
            let mut table = vec![0.0; ns * na];
            for s in 0..ns {
                let pb = pi_b.probs(t, s);
                let row = &mut table[s * na..(s + 1) * na];
                match &self.kind {
                    SpecKind::Tilting(u) => {
                        let u = Self::pick(u, t);
                        let z: f64 = u.iter().zip(pb).map(|(x, p)| x * p).sum();
                        for a in 0..na {
                            row[a] = u[a] * pb[a] / z;
                        }
                    }
                    SpecKind::Modified { inv, .. } => {
                        let inv = &Self::pick(inv, t)[s];
                        for a in 0..na {
                            row[a] = pb[inv[a]];
                        }
                    }
                }
            }
            tables.push(table);
        }
        Ok(StochasticPolicy::from_tables_unchecked(ns, na, tables))
    }
}

/// `π^e(a|s) ∝ u_t(a) π^b(a|s)`.
pub fn make_tilting(pi_b: &StochasticPolicy, u: Vec<Vec<f64>>) -> Result<StochasticPolicy> {
    NaturalPolicySpec::tilting_per_time(u)?.evaluation_policy(pi_b)
}

/// `π^e(a|s) = π^b(τ⁻¹(s, a)|s)`.
pub fn make_modified(pi_b: &StochasticPolicy, tau: Vec<Vec<Vec<usize>>>) -> Result<StochasticPolicy> {
    NaturalPolicySpec::modified_per_time(tau)?.evaluation_policy(pi_b)
}

/// `q^τ_t(s, a) = q_t(s, τ_t(s, a))`.
pub fn apply_tau_to_q(q: &QTable, spec: &NaturalPolicySpec, t: usize) -> QTable {
    QTable::from_fn(q.n_states(), q.n_actions(), |s, a| q.get(s, spec.tau(t, s, a)))
}

/// `η_t = π^e / π^b` with `0/0 := 0`. Cells where `π^e > 0 = π^b` are also
/// set to zero; their count is returned alongside the table.
pub fn eta_table(pi_b: &StochasticPolicy, pi_e: &StochasticPolicy, t: usize) -> (QTable, usize) {
    let mut zeroed = 0;
    let table = QTable::from_fn(pi_b.n_states(), pi_b.n_actions(), |s, a| {
        let (pb, pe) = (pi_b.prob(t, s, a), pi_e.prob(t, s, a));
        if pb > 0.0 {
            pe / pb
        } else {
            if pe > 0.0 {
                zeroed += 1;
            }
            0.0
        }
    });
    (table, zeroed)
}

/// Exact finite-horizon ratios. `eta` and `mu` have `H` tables, `w` has
/// `H + 1` slices (the last one for the terminal state).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSet {
    pub eta: Vec<QTable>,
    pub w: Vec<Vec<f64>>,
    pub mu: Vec<QTable>,
    /// `C = max η_t(s, a)` over reachable states.
    pub c: f64,
    /// `C' = max w_t(s)`.
    pub c_prime: f64,
    /// Cells with `π^e > 0 = π^b` on unreachable states, set to zero.
    pub zeroed: usize,
}

fn check_overlap(
    pi_b: &StochasticPolicy,
    pi_e: &StochasticPolicy,
    t: usize,
    s: usize,
    report_t: usize,
) -> Result<()> {
    for a in 0..pi_b.n_actions() {
        if pi_e.prob(t, s, a) > 0.0 && pi_b.prob(t, s, a) == 0.0 {
            return Err(OpeError::NoOverlap { t: report_t, s, a });
        }
    }
    Ok(())
}

pub fn compute_ratios(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    pi_e: &StochasticPolicy,
) -> Result<RatioSet> {
    let horizon = mdp.horizon()?;
    let p_b = exact_marginals_finite(mdp, pi_b)?;
    let p_e = exact_marginals_finite(mdp, pi_e)?;
    let ns = mdp.n_states();
    let mut w = Vec::with_capacity(horizon + 1);
    let mut c_prime: f64 = 0.0;
    for t in 0..=horizon {
        let slice: Vec<f64> = (0..ns)
            .map(|s| if p_b[t][s] > 0.0 { p_e[t][s] / p_b[t][s] } else { 0.0 })
            .collect();
        c_prime = c_prime.max(slice.iter().copied().fold(0.0, f64::max));
        w.push(slice);
    }
    let mut eta = Vec::with_capacity(horizon);
    let mut mu = Vec::with_capacity(horizon);
    let mut c: f64 = 0.0;
    let mut zeroed = 0;
    for t in 0..horizon {
        for s in 0..ns {
            if p_b[t][s] > 0.0 {
                check_overlap(pi_b, pi_e, t, s, t)?;
            }
        }
        let (eta_t, z) = eta_table(pi_b, pi_e, t);
        zeroed += z;
        for s in (0..ns).filter(|&s| p_b[t][s] > 0.0) {
            c = c.max(eta_t.row(s).iter().copied().fold(0.0, f64::max));
        }
        mu.push(QTable::from_fn(ns, mdp.n_actions(), |s, a| eta_t.get(s, a) * w[t][s]));
        eta.push(eta_t);
    }
    Ok(RatioSet { eta, w, mu, c, c_prime, zeroed })
}

/// Exact stationary ratios against a sampling distribution `p_b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryRatioSet {
    pub eta: QTable,
    /// `w*(s) = p^(∞)_{e,γ}(s) / p_b(s)`
    pub w_star: Vec<f64>,
    pub mu_star: QTable,
    pub visitation: Vec<f64>,
    pub p_b: Vec<f64>,
    pub c: f64,
    pub c_prime: f64,
    pub zeroed: usize,
}

pub fn compute_stationary_ratios(
    mdp: &TabularDecisionProcess,
    pi_b: &StochasticPolicy,
    pi_e: &StochasticPolicy,
    p_b: &[f64],
) -> Result<StationaryRatioSet> {
    mdp.gamma()?;
    let ns = mdp.n_states();
    if p_b.len() != ns {
        return Err(OpeError::Dimension("sampling distribution length".into()));
    }
    let visitation = exact_discounted_visitation(mdp, pi_e)?;
    let mut w_star = vec![0.0; ns];
    for s in 0..ns {
        if p_b[s] > 0.0 {
            w_star[s] = visitation[s] / p_b[s];
            check_overlap(pi_b, pi_e, 0, s, 0)?;
        } else if visitation[s] > 1e-14 {
            return Err(OpeError::NoStateOverlap { s });
        }
    }
    let (eta, zeroed) = eta_table(pi_b, pi_e, 0);
    let mut c: f64 = 0.0;
    for s in (0..ns).filter(|&s| p_b[s] > 0.0) {
        c = c.max(eta.row(s).iter().copied().fold(0.0, f64::max));
    }
    let mu_star = QTable::from_fn(ns, mdp.n_actions(), |s, a| eta.get(s, a) * w_star[s]);
    let c_prime = w_star.iter().copied().fold(0.0, f64::max);
    Ok(StationaryRatioSet { eta, w_star, mu_star, visitation, p_b: p_b.to_vec(), c, c_prime, zeroed })
}

/// Cumulative ratios `λ_t = Π_{k ≤ t} η_k(s_k, a_k)` along one trajectory.
pub fn cumulative_ratios(traj: &Trajectory, eta: &[QTable]) -> Vec<f64> {
    let mut acc = 1.0;
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            acc *= eta[t].get(step.s, step.a);
            acc
        })
        .collect()
}

/// Serialized policy spec as it appears in configuration files.
///
/// ```json
/// {"kind": "tilting", "u": "ceil_half"}
/// {"kind": "tilting", "u": [1.0, 2.0]}
/// {"kind": "modified_treatment", "tau": "shift_mod"}
/// {"kind": "modified_treatment", "tau": [[1, 0], [0, 1]]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpecConfig {
    Tilting {
        u: TiltConfig,
    },
    ModifiedTreatment {
        tau: TauConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modulus: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TiltConfig {
    Token(String),
    Stationary(Vec<f64>),
    PerTime(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauConfig {
    Token(String),
    Stationary(Vec<Vec<usize>>),
    PerTime(Vec<Vec<Vec<usize>>>),
}

impl PolicySpecConfig {
    pub fn resolve(&self, n_states: usize, n_actions: usize) -> Result<NaturalPolicySpec> {
        let spec = match self {
            PolicySpecConfig::Tilting { u } => match u {
                TiltConfig::Token(tok) if tok == "ceil_half" => NaturalPolicySpec::ceil_half(n_actions),
                TiltConfig::Token(tok) => {
                    return Err(OpeError::config("policy_spec.u", format!("unknown token {tok:?}")))
                }
                TiltConfig::Stationary(u) => NaturalPolicySpec::tilting(u.clone())?,
                TiltConfig::PerTime(u) => NaturalPolicySpec::tilting_per_time(u.clone())?,
            },
            PolicySpecConfig::ModifiedTreatment { tau, modulus } => match tau {
                TauConfig::Token(tok) if tok == "shift_mod" => {
                    NaturalPolicySpec::shift_mod(n_states, n_actions, modulus.unwrap_or(n_actions))?
                }
                TauConfig::Token(tok) if tok == "identity" => {
                    NaturalPolicySpec::identity_treatment(n_states, n_actions)
                }
                TauConfig::Token(tok) => {
                    return Err(OpeError::config("policy_spec.tau", format!("unknown token {tok:?}")))
                }
                TauConfig::Stationary(t) => NaturalPolicySpec::modified(t.clone())?,
                TauConfig::PerTime(t) => NaturalPolicySpec::modified_per_time(t.clone())?,
            },
        };
        spec.check_dims(n_states, n_actions)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_half_weights() {
        assert_eq!(NaturalPolicySpec::ceil_half(6).u(0).unwrap(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn binary_tilting_closed_form() {
        let pi_b = StochasticPolicy::stationary(vec![vec![0.5, 0.5]]).unwrap();
        let pi_e = make_tilting(&pi_b, vec![vec![1.0, 2.0]]).unwrap();
        assert!((pi_e.prob(0, 0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_tilt_is_identity() {
        let pi_b = StochasticPolicy::stationary(vec![vec![0.2, 0.3, 0.5], vec![0.0, 0.1, 0.9]]).unwrap();
        let pi_e = make_tilting(&pi_b, vec![vec![4.0; 3]]).unwrap();
        for s in 0..2 {
            for a in 0..3 {
                assert!((pi_e.prob(0, s, a) - pi_b.prob(0, s, a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_non_positive_weights_and_non_bijections() {
        assert!(NaturalPolicySpec::tilting(vec![1.0, 0.0]).is_err());
        assert!(NaturalPolicySpec::modified(vec![vec![0, 0]]).is_err());
        assert!(NaturalPolicySpec::shift_mod(3, 6, 5).is_err());
    }

    #[test]
    fn shift_mod_pushforward() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|s| {
                let raw: Vec<f64> = (0..6).map(|a| 1.0 + (a * (s + 2)) as f64).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|x| x / z).collect()
            })
            .collect();
        let pi_b = StochasticPolicy::stationary(rows).unwrap();
        let spec = NaturalPolicySpec::shift_mod(3, 6, 6).unwrap();
        let pi_e = spec.evaluation_policy(&pi_b).unwrap();
        for s in 0..3 {
            for a in 0..6 {
                assert_eq!(pi_e.prob(0, s, a), pi_b.prob(0, s, (a + 6 - s % 6) % 6));
            }
        }
    }

    #[test]
    fn config_tokens_resolve() {
        let cfg: PolicySpecConfig = serde_json::from_str(r#"{"kind":"tilting","u":"ceil_half"}"#).unwrap();
        assert!(cfg.resolve(4, 6).unwrap().is_tilting());
        let cfg: PolicySpecConfig =
            serde_json::from_str(r#"{"kind":"modified_treatment","tau":"shift_mod"}"#).unwrap();
        let spec = cfg.resolve(4, 6).unwrap();
        assert_eq!(spec.tau(0, 3, 4), 1);
        let cfg: PolicySpecConfig = serde_json::from_str(r#"{"kind":"tilting","u":"wide"}"#).unwrap();
        assert!(matches!(cfg.resolve(4, 6), Err(OpeError::Config { .. })));
    }
}
