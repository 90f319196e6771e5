//! Value estimators: the cross-fitted efficient estimators, the MIS and
//! direct-method baselines, the naive plug-in and the value-direct estimator.

mod crossfit;
mod phi;

use std::borrow::Cow;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crossfit::{crossfit, write_reports_csv, EstimateReport, FoldEstimate, FoldFit, FoldPartition, FoldScheme};
pub use phi::{phi_mis, phi_mo1, phi_mo2, phi_naive, phi_pr2, phi_ti1, phi_ti2, phi_v2, V2Nuisance};

use crate::error::{OpeError, Result};
use crate::mdp::data::{Dataset, DatasetKind};
use crate::mdp::exact::dot;
use crate::mdp::policy::StochasticPolicy;
use crate::nuisance::{
    add_noise, corrupt, estimate_v_direct, estimate_w_star, train_finite, train_stationary, transition_stats,
    CorruptionSpec, CorruptionTarget, Diagnostics, FiniteTrainOptions, NuisanceSet,
};
use crate::policies::{eta_table, NaturalPolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "TI1")]
    Ti1,
    #[serde(rename = "MO1")]
    Mo1,
    #[serde(rename = "naive_plugin")]
    NaivePlugin,
    #[serde(rename = "TI2")]
    Ti2,
    #[serde(rename = "MO2")]
    Mo2,
    #[serde(rename = "MIS")]
    Mis,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "V2")]
    V2,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Ti1,
        EstimatorKind::Mo1,
        EstimatorKind::NaivePlugin,
        EstimatorKind::Ti2,
        EstimatorKind::Mo2,
        EstimatorKind::Mis,
        EstimatorKind::Dm,
        EstimatorKind::V2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ti1 => "TI1",
            EstimatorKind::Mo1 => "MO1",
            EstimatorKind::NaivePlugin => "naive_plugin",
            EstimatorKind::Ti2 => "TI2",
            EstimatorKind::Mo2 => "MO2",
            EstimatorKind::Mis => "MIS",
            EstimatorKind::Dm => "DM",
            EstimatorKind::V2 => "V2",
        }
    }

    /// Whether the estimator consumes trajectories (finite horizon) rather
    /// than transitions. `DM` accepts both.
    pub fn wants_trajectories(self) -> Option<bool> {
        match self {
            EstimatorKind::Ti1 | EstimatorKind::Mo1 | EstimatorKind::NaivePlugin => Some(true),
            EstimatorKind::Ti2 | EstimatorKind::Mo2 | EstimatorKind::Mis | EstimatorKind::V2 => Some(false),
            EstimatorKind::Dm => None,
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                OpeError::config("estimator", format!("unknown estimator {s:?}; expected one of TI1, MO1, naive_plugin, TI2, MO2, MIS, DM, V2"))
            })
    }
}

/// Where the nuisances come from.
#[derive(Debug, Clone, Default)]
pub enum NuisanceSource {
    /// Fitted on each training fold (or on the full data for the
    /// non-cross-fitted baselines).
    #[default]
    Estimated,
    /// Fixed tables used for every fold, e.g. the true nuisances.
    Oracle(Arc<NuisanceSet>),
}

/// How the initial-state term `(1-γ) E_{p_e^(1) × π^b}[q̂^τ]` of the
/// modified-treatment discounted estimator is evaluated.
#[derive(Debug, Clone, Default)]
pub enum InitialTerm {
    /// Exact sum under the fitted behavior policy; equals `(1-γ) E_{p_e^(1)}[v̂]`.
    #[default]
    PluginBehavior,
    /// Average over auxiliary draws `(s, a) ~ p_e^(1) × π^b`.
    Draws(Vec<(usize, usize)>),
    /// Exact sum under a known behavior policy.
    ExactBehavior(StochasticPolicy),
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of folds; `1` fits the nuisances on all records and scores the
    /// same records (no sample splitting).
    pub k: usize,
    pub seed: u64,
    /// Defaults to random folds for trajectories and contiguous blocks for
    /// transitions.
    pub folds: Option<FoldScheme>,
    pub nuisances: NuisanceSource,
    /// Noise applied to the fitted (or oracle) nuisances of every fold, with
    /// a per-fold seed.
    pub corruption: Option<CorruptionSpec>,
    pub initial: InitialTerm,
    pub finite: FiniteTrainOptions,
    /// Known behavior policy, required by `V2` unless oracle nuisances are given.
    pub behavior: Option<StochasticPolicy>,
}

impl EstimatorOptions {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        EstimatorOptions {
            n_states,
            n_actions,
            k: 2,
            seed: 0,
            folds: None,
            nuisances: NuisanceSource::Estimated,
            corruption: None,
            initial: InitialTerm::default(),
            finite: FiniteTrainOptions::default(),
            behavior: None,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_oracle(mut self, nuisances: NuisanceSet) -> Self {
        self.nuisances = NuisanceSource::Oracle(Arc::new(nuisances));
        self
    }

    pub fn with_corruption(mut self, corruption: CorruptionSpec) -> Self {
        self.corruption = Some(corruption);
        self
    }

    fn partition(&self, data: &Dataset) -> Result<FoldPartition> {
        let scheme = self.folds.unwrap_or(match data.data {
            DatasetKind::Trajectories(_) => FoldScheme::Random,
            DatasetKind::Transitions(_) => FoldScheme::Contiguous,
        });
        FoldPartition::new(data.len(), self.k, scheme, self.seed)
    }
}

/// Parameters of the discounted estimand.
#[derive(Debug, Clone, Copy)]
pub struct Discounted<'a> {
    pub gamma: f64,
    /// Initial distribution `p_e^(1)` of the discounted value.
    pub p_e1: &'a [f64],
}

/// Fits (or fetches) the nuisances for one training index set and applies
/// the configured corruption with a stream derived from `stream`.
fn nuisances_for(
    data: &Dataset,
    idx: &[usize],
    spec: &NaturalPolicySpec,
    discounted: Option<Discounted<'_>>,
    opts: &EstimatorOptions,
    stream: u64,
) -> Result<Arc<NuisanceSet>> {
    let base = match &opts.nuisances {
        NuisanceSource::Oracle(set) => {
            if set.is_stationary() != discounted.is_some() {
                return Err(OpeError::WrongFlavor {
                    expected: if discounted.is_some() { "stationary-nuisance" } else { "finite-horizon-nuisance" },
                });
            }
            Arc::clone(set)
        }
        NuisanceSource::Estimated => {
            let train = if idx.len() == data.len() { Cow::Borrowed(data) } else { Cow::Owned(data.subset(idx)?) };
            Arc::new(match discounted {
                None => train_finite(opts.n_states, opts.n_actions, &train, spec, opts.finite)?,
                Some(d) => train_stationary(opts.n_states, opts.n_actions, &train, spec, d.gamma, d.p_e1)?,
            })
        }
    };
    match &opts.corruption {
        Some(c) => Ok(Arc::new(corrupt(&base, &c.for_stream(stream))?)),
        None => Ok(base),
    }
}

fn finite_crossfit(
    name: &str,
    data: &Dataset,
    spec: &NaturalPolicySpec,
    opts: &EstimatorOptions,
    phi: fn(&crate::mdp::data::Trajectory, &NuisanceSet) -> f64,
) -> Result<EstimateReport> {
    let trajs = data.as_trajectories()?;
    let partition = opts.partition(data)?;
    crossfit(
        name,
        &partition,
        Some(opts.seed),
        |fold, idx| {
            let n = nuisances_for(data, idx, spec, None, opts, fold as u64)?;
            let diagnostics = n.diagnostics.clone();
            Ok(FoldFit { nuisances: n, constant: 0.0, diagnostics })
        },
        |i, n| phi(&trajs[i], n),
    )
}

/// Cross-fitted tilting estimator for finite horizons.
pub fn estimate_ti1(data: &Dataset, spec: &NaturalPolicySpec, opts: &EstimatorOptions) -> Result<EstimateReport> {
    require_tilting(spec, true)?;
    finite_crossfit("TI1", data, spec, opts, phi_ti1)
}

/// Cross-fitted modified-treatment estimator for finite horizons.
pub fn estimate_mo1(data: &Dataset, spec: &NaturalPolicySpec, opts: &EstimatorOptions) -> Result<EstimateReport> {
    require_tilting(spec, false)?;
    finite_crossfit("MO1", data, spec, opts, phi_mo1)
}

/// The pre-specified-policy formula with an estimated evaluation policy.
pub fn estimate_naive_plugin(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    finite_crossfit("naive_plugin", data, spec, opts, phi_naive)
}

fn require_tilting(spec: &NaturalPolicySpec, tilting: bool) -> Result<()> {
    if spec.is_tilting() != tilting {
        return Err(OpeError::InvalidSpec(format!(
            "this estimator needs a {} policy",
            if tilting { "tilting" } else { "modified treatment" }
        )));
    }
    Ok(())
}

fn check_p_e1(d: Discounted<'_>, n_states: usize) -> Result<()> {
    if d.p_e1.len() != n_states {
        return Err(OpeError::Dimension(format!("p_e1 has {} entries, expected {n_states}", d.p_e1.len())));
    }
    if !(0.0..1.0).contains(&d.gamma) {
        return Err(OpeError::config("gamma", "must lie in [0, 1)"));
    }
    Ok(())
}

/// Cross-fitted tilting estimator for discounted values.
pub fn estimate_ti2(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    d: Discounted<'_>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    require_tilting(spec, true)?;
    check_p_e1(d, opts.n_states)?;
    let records = data.as_transitions()?;
    let partition = opts.partition(data)?;
    crossfit(
        "TI2",
        &partition,
        Some(opts.seed),
        |fold, idx| {
            let n = nuisances_for(data, idx, spec, Some(d), opts, fold as u64)?;
            let constant = (1.0 - d.gamma) * dot(d.p_e1, n.v(0));
            let diagnostics = n.diagnostics.clone();
            Ok(FoldFit { nuisances: n, constant, diagnostics })
        },
        |i, n| phi_ti2(&records[i], n, d.gamma),
    )
}

/// `(1-γ) E_{p_e^(1) × π}[q̂^τ]` for the configured initial term.
pub fn mo2_initial_term(n: &NuisanceSet, d: Discounted<'_>, initial: &InitialTerm) -> f64 {
    let mean = match initial {
        InitialTerm::PluginBehavior => behavior_average(n, n.pi_b(), d.p_e1),
        InitialTerm::ExactBehavior(pi_b) => behavior_average(n, pi_b, d.p_e1),
        InitialTerm::Draws(draws) => {
            draws.iter().map(|&(s, a)| n.q_tau(0, s, a)).sum::<f64>() / draws.len().max(1) as f64
        }
    };
    (1.0 - d.gamma) * mean
}

fn behavior_average(n: &NuisanceSet, pi_b: &StochasticPolicy, p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (s, &ps) in p.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (a, &pa) in pi_b.probs(0, s).iter().enumerate() {
            acc += ps * pa * n.q_tau(0, s, a);
        }
    }
    acc
}

/// Cross-fitted modified-treatment estimator for discounted values.
pub fn estimate_mo2(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    d: Discounted<'_>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    require_tilting(spec, false)?;
    check_p_e1(d, opts.n_states)?;
    if let InitialTerm::Draws(draws) = &opts.initial {
        if draws.is_empty() {
            return Err(OpeError::config("initial", "needs at least one draw"));
        }
    }
    let records = data.as_transitions()?;
    let partition = opts.partition(data)?;
    crossfit(
        "MO2",
        &partition,
        Some(opts.seed),
        |fold, idx| {
            let n = nuisances_for(data, idx, spec, Some(d), opts, fold as u64)?;
            let constant = mo2_initial_term(&n, d, &opts.initial);
            let diagnostics = n.diagnostics.clone();
            Ok(FoldFit { nuisances: n, constant, diagnostics })
        },
        |i, n| phi_mo2(&records[i], n, d.gamma),
    )
}

fn single_fit_report(name: &str, scores: &[f64], seed: u64, diagnostics: Diagnostics) -> EstimateReport {
    EstimateReport::from_scores(name, scores, &vec![0; scores.len()], 1, Some(seed), diagnostics)
}

/// Marginalized importance sampling `E_n[ŵ* η̂ r]`, fitted on the full data.
pub fn estimate_mis(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    d: Discounted<'_>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    check_p_e1(d, opts.n_states)?;
    let records = data.as_transitions()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let n = nuisances_for(data, &all, spec, Some(d), opts, 0)?;
    let scores: Vec<f64> = records.iter().map(|x| phi_mis(x, &n)).collect();
    Ok(single_fit_report("MIS", &scores, opts.seed, n.diagnostics.clone()))
}

/// Direct method. Discounted: `(1-γ) E_{p_e^(1)}[v̂]`; finite horizon: the
/// average of `v̂_0(s_0)` over the observed initial states. Fitted on the
/// full data.
pub fn estimate_dm(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    discounted: Option<Discounted<'_>>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let all: Vec<usize> = (0..data.len()).collect();
    match discounted {
        Some(d) => {
            check_p_e1(d, opts.n_states)?;
            data.as_transitions()?;
            let n = nuisances_for(data, &all, spec, Some(d), opts, 0)?;
            let value = (1.0 - d.gamma) * dot(d.p_e1, n.v(0));
            let mut report = single_fit_report("DM", &[value], opts.seed, n.diagnostics.clone());
            report.n = data.len();
            report.per_fold[0].size = data.len();
            report.se = None;
            Ok(report)
        }
        None => {
            let trajs = data.as_trajectories()?;
            let n = nuisances_for(data, &all, spec, None, opts, 0)?;
            let scores: Vec<f64> = trajs.iter().map(|x| n.v(0)[x.state(0)]).collect();
            Ok(single_fit_report("DM", &scores, opts.seed, n.diagnostics.clone()))
        }
    }
}

impl V2Nuisance {
    /// The value-direct nuisances implied by a stationary nuisance set.
    pub fn from_set(n: &NuisanceSet) -> Result<Self> {
        if !n.is_stationary() {
            return Err(OpeError::WrongFlavor { expected: "stationary-nuisance" });
        }
        Ok(V2Nuisance { eta: n.eta(0).clone(), v: n.v(0).to_vec(), w_star: n.w_star().to_vec() })
    }
}

/// Value-direct estimator for a known behavior policy: `v̂` and `ŵ*` are
/// fitted from moment equations that use the known ratio `η`.
///
/// Corruption targets `q` (applied to `v̂`) and `w_star`.
pub fn estimate_v2(
    data: &Dataset,
    spec: &NaturalPolicySpec,
    d: Discounted<'_>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    check_p_e1(d, opts.n_states)?;
    let records = data.as_transitions()?;
    let oracle = match &opts.nuisances {
        NuisanceSource::Oracle(set) => Some(V2Nuisance::from_set(set)?),
        NuisanceSource::Estimated => None,
    };
    let eta = match (&oracle, &opts.behavior) {
        (Some(o), _) => o.eta.clone(),
        (None, Some(pi_b)) => {
            pi_b.check_dims(opts.n_states, opts.n_actions, None)?;
            eta_table(pi_b, &spec.evaluation_policy(pi_b)?, 0).0
        }
        (None, None) => return Err(OpeError::config("behavior", "V2 needs the known behavior policy")),
    };
    if let Some(c) = &opts.corruption {
        c.validate()?;
        if !matches!(c.target, CorruptionTarget::Q | CorruptionTarget::WStar) {
            return Err(OpeError::config("corruption.target", "V2 supports q (applied to v) and w_star"));
        }
    }
    let partition = opts.partition(data)?;
    crossfit(
        "V2",
        &partition,
        Some(opts.seed),
        |fold, idx| {
            let (mut n, diagnostics) = match &oracle {
                Some(o) => (o.clone(), Diagnostics::default()),
                None => {
                    let stats = transition_stats(opts.n_states, opts.n_actions, &data.subset(idx)?)?;
                    let (v, mut diag) = estimate_v_direct(&stats, &eta, d.gamma)?;
                    let (w_star, w_diag) = estimate_w_star(&stats, &eta, d.gamma, d.p_e1)?;
                    diag.merge(&w_diag);
                    (V2Nuisance { eta: eta.clone(), v, w_star }, diag)
                }
            };
            if let Some(c) = &opts.corruption {
                let target = if c.target == CorruptionTarget::Q { &mut n.v } else { &mut n.w_star };
                add_noise(target, &c.for_stream(fold as u64))?;
            }
            let constant = (1.0 - d.gamma) * dot(d.p_e1, &n.v);
            Ok(FoldFit { nuisances: n, constant, diagnostics })
        },
        |i, n| phi_v2(&records[i], n, d.gamma),
    )
}

fn require_discounted(kind: EstimatorKind, d: Option<Discounted<'_>>) -> Result<Discounted<'_>> {
    d.ok_or_else(|| OpeError::config("gamma", format!("{kind} needs gamma and p_e1")))
}

/// Dispatches to the estimator named by `kind`. `discounted` must be given
/// exactly for the transition-based estimators (and for discounted `DM`).
pub fn run_estimator(
    kind: EstimatorKind,
    data: &Dataset,
    spec: &NaturalPolicySpec,
    discounted: Option<Discounted<'_>>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let need = |d| require_discounted(kind, d);
    match kind {
        EstimatorKind::Ti1 => estimate_ti1(data, spec, opts),
        EstimatorKind::Mo1 => estimate_mo1(data, spec, opts),
        EstimatorKind::NaivePlugin => estimate_naive_plugin(data, spec, opts),
        EstimatorKind::Ti2 => estimate_ti2(data, spec, need(discounted)?, opts),
        EstimatorKind::Mo2 => estimate_mo2(data, spec, need(discounted)?, opts),
        EstimatorKind::Mis => estimate_mis(data, spec, need(discounted)?, opts),
        EstimatorKind::Dm => estimate_dm(data, spec, discounted, opts),
        EstimatorKind::V2 => estimate_v2(data, spec, need(discounted)?, opts),
    }
}
