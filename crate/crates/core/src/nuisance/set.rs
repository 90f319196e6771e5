use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::exact::{exact_q_v_discounted, exact_q_v_finite, policy_average};
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;
use crate::policies::{compute_ratios, compute_stationary_ratios, eta_table, NaturalPolicySpec, PolicySpecConfig};
use crate::tables::QTable;

/// Counters describing fallbacks taken while estimating nuisances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// States with no behavior data; their `π̂^b` rows fall back to uniform.
    pub unseen_states: usize,
    /// `(t, s, a)` cells with no data; `q̂` is set to zero there.
    pub unvisited_cells: usize,
    /// Ratio cells set to zero because the denominator was zero.
    pub zeroed_ratios: usize,
    /// Largest condition estimate of any dense moment solve (0 if none).
    pub max_condition: f64,
    /// Number of moment systems solved by fixed-point iteration.
    pub iterative_solves: usize,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.unseen_states += other.unseen_states;
        self.unvisited_cells += other.unvisited_cells;
        self.zeroed_ratios += other.zeroed_ratios;
        self.max_condition = self.max_condition.max(other.max_condition);
        self.iterative_solves += other.iterative_solves;
    }
}

/// Estimated `(π̂^b, q̂, ŵ)` (finite horizon) or `(π̂^b, q̂, ŵ*)` (stationary)
/// together with the derived `π̂^e`, `η̂` and `v̂ = Σ_a π̂^e q̂`.
///
/// The derived fields are always recomputed from the primary ones, so a set
/// can never hold an evaluation policy or v-function that is inconsistent
/// with its behavior policy and q-function.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    spec: NaturalPolicySpec,
    pi_b: StochasticPolicy,
    /// `H` tables, or one when stationary.
    q: Vec<QTable>,
    /// `ŵ_t` for `t < H`, or the single `ŵ*`.
    w: Vec<Vec<f64>>,
    stationary: bool,
    pi_e: StochasticPolicy,
    eta: Vec<QTable>,
    /// `H + 1` slices with `v̂_{H+1} ≡ 0`, or one when stationary.
    v: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

#[inline]
fn pick<T>(items: &[T], t: usize) -> &T {
    if items.len() == 1 {
        &items[0]
    } else {
        &items[t]
    }
}

impl NuisanceSet {
    pub fn finite(
        spec: NaturalPolicySpec,
        pi_b: StochasticPolicy,
        q: Vec<QTable>,
        w: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let horizon = q.len();
        if horizon == 0 || w.len() != horizon {
            return Err(OpeError::Dimension(format!(
                "need one q-table and one w-slice per step, got {} and {}",
                q.len(),
                w.len()
            )));
        }
        pi_b.check_dims(q[0].n_states(), q[0].n_actions(), Some(horizon))?;
        Self::build(spec, pi_b, q, w, false)
    }

    pub fn stationary(
        spec: NaturalPolicySpec,
        pi_b: StochasticPolicy,
        q: QTable,
        w_star: Vec<f64>,
    ) -> Result<Self> {
        pi_b.check_dims(q.n_states(), q.n_actions(), None)?;
        Self::build(spec, pi_b, vec![q], vec![w_star], true)
    }

    fn build(
        spec: NaturalPolicySpec,
        pi_b: StochasticPolicy,
        q: Vec<QTable>,
        w: Vec<Vec<f64>>,
        stationary: bool,
    ) -> Result<Self> {
        let ns = pi_b.n_states();
        if q.iter().any(|x| x.n_states() != ns || x.n_actions() != pi_b.n_actions())
            || w.iter().any(|x| x.len() != ns)
        {
            return Err(OpeError::Dimension("nuisance tables do not match the policy".into()));
        }
        let pi_e = spec.evaluation_policy(&pi_b)?;
        let mut zeroed = 0;
        let eta = (0..pi_e.n_tables())
            .map(|t| {
                let (table, z) = eta_table(&pi_b, &pi_e, t);
                zeroed += z;
                table
            })
            .collect();
        let mut v: Vec<Vec<f64>> = q.iter().enumerate().map(|(t, q_t)| policy_average(&pi_e, t, q_t)).collect();
        if !stationary {
            v.push(vec![0.0; ns]);
        }
        let diagnostics = Diagnostics { zeroed_ratios: zeroed, ..Diagnostics::default() };
        Ok(NuisanceSet { spec, pi_b, q, w, stationary, pi_e, eta, v, diagnostics })
    }

    /// True nuisances `(π^b, q, w)` of a finite-horizon process.
    pub fn oracle_finite(
        mdp: &TabularDecisionProcess,
        pi_b: &StochasticPolicy,
        spec: &NaturalPolicySpec,
    ) -> Result<Self> {
        let pi_e = spec.evaluation_policy(pi_b)?;
        let values = exact_q_v_finite(mdp, &pi_e)?;
        let ratios = compute_ratios(mdp, pi_b, &pi_e)?;
        let horizon = mdp.horizon()?;
        let w = ratios.w[..horizon].to_vec();
        Self::finite(spec.clone(), pi_b.clone(), values.q, w)
    }

    /// True nuisances `(π^b, q, w*)` of a stationary process sampled from `p_b`.
    pub fn oracle_stationary(
        mdp: &TabularDecisionProcess,
        pi_b: &StochasticPolicy,
        spec: &NaturalPolicySpec,
        p_b: &[f64],
    ) -> Result<Self> {
        let pi_e = spec.evaluation_policy(pi_b)?;
        let values = exact_q_v_discounted(mdp, &pi_e)?;
        let ratios = compute_stationary_ratios(mdp, pi_b, &pi_e, p_b)?;
        Self::stationary(spec.clone(), pi_b.clone(), values.q, ratios.w_star)
    }

    fn rebuild(&self, pi_b: StochasticPolicy, q: Vec<QTable>, w: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = Self::build(self.spec.clone(), pi_b, q, w, self.stationary)?;
        let zeroed = out.diagnostics.zeroed_ratios;
        out.diagnostics = Diagnostics { zeroed_ratios: zeroed, ..self.diagnostics.clone() };
        Ok(out)
    }

    /// Same set with a different behavior policy; `π̂^e`, `η̂`, `v̂` are re-derived.
    pub fn with_pi_b(&self, pi_b: StochasticPolicy) -> Result<Self> {
        self.rebuild(pi_b, self.q.clone(), self.w.clone())
    }

    /// Same set with different q-tables; `v̂` is re-derived.
    pub fn with_q(&self, q: Vec<QTable>) -> Result<Self> {
        if q.len() != self.q.len() {
            return Err(OpeError::Dimension("number of q-tables changed".into()));
        }
        self.rebuild(self.pi_b.clone(), q, self.w.clone())
    }

    /// Same set with different state ratios (`ŵ_t` or `ŵ*`).
    pub fn with_w(&self, w: Vec<Vec<f64>>) -> Result<Self> {
        if w.len() != self.w.len() {
            return Err(OpeError::Dimension("number of w-slices changed".into()));
        }
        self.rebuild(self.pi_b.clone(), self.q.clone(), w)
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    /// Horizon of a finite-horizon set.
    pub fn horizon(&self) -> Option<usize> {
        (!self.stationary).then_some(self.q.len())
    }

    pub fn spec(&self) -> &NaturalPolicySpec {
        &self.spec
    }

    pub fn pi_b(&self) -> &StochasticPolicy {
        &self.pi_b
    }

    pub fn pi_e(&self) -> &StochasticPolicy {
        &self.pi_e
    }

    pub fn q_tables(&self) -> &[QTable] {
        &self.q
    }

    pub fn w_slices(&self) -> &[Vec<f64>] {
        &self.w
    }

    #[inline]
    pub fn q(&self, t: usize) -> &QTable {
        pick(&self.q, t)
    }

    /// `q̂^τ_t(s, a) = q̂_t(s, τ_t(s, a))`.
    #[inline]
    pub fn q_tau(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q(t).get(s, self.spec.tau(t, s, a))
    }

    /// `v̂_t`; for finite horizons `t == H` gives the zero function.
    #[inline]
    pub fn v(&self, t: usize) -> &[f64] {
        pick(&self.v, t)
    }

    #[inline]
    pub fn w(&self, t: usize) -> &[f64] {
        pick(&self.w, t)
    }

    /// `ŵ*` of a stationary set.
    pub fn w_star(&self) -> &[f64] {
        &self.w[0]
    }

    #[inline]
    pub fn eta(&self, t: usize) -> &QTable {
        pick(&self.eta, t)
    }

    /// `μ̂_t(s, a) = ŵ_t(s) η̂_t(s, a)`.
    #[inline]
    pub fn mu(&self, t: usize, s: usize, a: usize) -> f64 {
        self.w(t)[s] * self.eta(t).get(s, a)
    }

    pub fn to_file(&self) -> NuisanceFile {
        NuisanceFile {
            spec: self.spec.to_config(),
            stationary: self.stationary,
            pi_b: self.pi_b.clone(),
            q: self.q.clone(),
            w: self.w.clone(),
        }
    }

    pub fn from_file(file: NuisanceFile) -> Result<Self> {
        let spec = file.spec.resolve(file.pi_b.n_states(), file.pi_b.n_actions())?;
        if file.stationary {
            let q = file.q.into_iter().next().ok_or_else(|| OpeError::Dimension("missing q-table".into()))?;
            let w = file.w.into_iter().next().ok_or_else(|| OpeError::Dimension("missing w*".into()))?;
            Self::stationary(spec, file.pi_b, q, w)
        } else {
            Self::finite(spec, file.pi_b, file.q, file.w)
        }
    }
}

/// On-disk nuisance tables. Derived quantities are not stored; they are
/// recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceFile {
    pub spec: PolicySpecConfig,
    pub stationary: bool,
    pub pi_b: StochasticPolicy,
    pub q: Vec<QTable>,
    pub w: Vec<Vec<f64>>,
}
