//! Replicated off-policy evaluation on a tabular environment with a
//! q-learned behavior policy.
//!
//! Seeds: the behavior policy is learned with `derive_seed(master, 0)`.
//! Replication `r` at horizon index `h` uses the stream
//! `1 + (h << 32) + r`; its trajectory is drawn with
//! `derive_seed(master, stream)`, its folds with
//! `derive_seed(master, stream) ^ 1`, and its nuisance noise with
//! `corruption.for_stream(stream)` (then per fold inside the estimator).

pub mod qlearn;
pub mod taxi;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::estimators::{run_estimator, Discounted, EstimatorKind, EstimatorOptions, NuisanceSource};
use crate::mdp::exact::{exact_value_discounted, stationary_distribution};
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;
use crate::mdp::simulate::simulate_stationary;
use crate::nuisance::{derive_seed, CorruptionSpec, CorruptionTarget, NuisanceSet};
use crate::policies::{NaturalPolicySpec, PolicySpecConfig};

pub use qlearn::{greedy_actions, q_learning, QLearningConfig};
pub use taxi::{build_taxi, TaxiVariant};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    #[default]
    Estimated,
    /// True nuisances of the environment; for sanity checks.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Builtin name (`taxi-small`, `taxi-liu`) or a path to a discounted
    /// process file, relative to the config file.
    pub env: String,
    pub gamma: f64,
    pub policy_spec: PolicySpecConfig,
    /// Transitions per run.
    pub horizons: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionSpec>,
    #[serde(default)]
    pub q_learning: QLearningConfig,
    /// Folds for the cross-fitted estimators; `1` uses one full-data fit
    /// for every estimator.
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub nuisances: NuisanceMode,
}

fn default_k() -> usize {
    2
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the environment.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(OpeError::config("gamma", "must lie in (0, 1)"));
        }
        if self.replications == 0 {
            return Err(OpeError::config("replications", "must be >= 1"));
        }
        if self.horizons.is_empty() {
            return Err(OpeError::config("horizons", "must be nonempty"));
        }
        if self.k == 0 {
            return Err(OpeError::config("K", "must be >= 1"));
        }
        if let Some(&h) = self.horizons.iter().find(|&&h| h < self.k) {
            return Err(OpeError::config("horizons", format!("each horizon must be >= K, got {h}")));
        }
        if self.estimators.is_empty() {
            return Err(OpeError::config("estimators", "must be nonempty"));
        }
        if let Some(kind) = self.estimators.iter().find(|k| k.wants_trajectories() == Some(true)) {
            return Err(OpeError::config(
                "estimators",
                format!("{kind} needs finite-horizon episodes; experiments use one discounted trajectory"),
            ));
        }
        let tilting = matches!(self.policy_spec, PolicySpecConfig::Tilting { .. });
        for kind in &self.estimators {
            let mismatch = match kind {
                EstimatorKind::Ti2 | EstimatorKind::V2 => !tilting,
                EstimatorKind::Mo2 => tilting,
                _ => false,
            };
            if mismatch {
                return Err(OpeError::config("estimators", format!("{kind} does not apply to this policy_spec")));
            }
        }
        if let Some(c) = &self.corruption {
            c.validate()?;
            if c.target == CorruptionTarget::W {
                return Err(OpeError::config("corruption.target", "w applies to finite-horizon data; use w_star"));
            }
        }
        self.q_learning.validate()
    }

    pub fn scenario(&self) -> &'static str {
        scenario_name(self.corruption.as_ref())
    }
}

pub fn scenario_name(corruption: Option<&CorruptionSpec>) -> &'static str {
    match corruption.map(|c| c.target) {
        None => "well_specified",
        Some(CorruptionTarget::Q) => "misspecified_q",
        Some(CorruptionTarget::WStar) => "misspecified_w_star",
        Some(CorruptionTarget::W) => "misspecified_w",
        Some(CorruptionTarget::PiB) => "misspecified_pi_b",
    }
}

/// Resolves `env` to a discounted process at `gamma`.
pub fn load_env(env: &str, gamma: f64, base_dir: Option<&Path>) -> Result<TabularDecisionProcess> {
    if let Some(variant) = TaxiVariant::from_name(env) {
        return build_taxi(variant, gamma);
    }
    let path: PathBuf = match base_dir {
        Some(dir) if Path::new(env).is_relative() => dir.join(env),
        _ => PathBuf::from(env),
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| OpeError::config("env", format!("not a builtin and cannot read {}: {e}", path.display())))?;
    let mdp = TabularDecisionProcess::from_json(&text)?;
    let file_gamma = mdp.gamma()?;
    if (file_gamma - gamma).abs() > 1e-12 {
        return Err(OpeError::config("gamma", format!("config says {gamma}, environment file says {file_gamma}")));
    }
    Ok(mdp)
}

/// Environment, behavior policy and ground truth shared by all replications.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    /// The environment with its sampling distribution set to the stationary
    /// distribution of `pi_b`.
    pub mdp: TabularDecisionProcess,
    pub pi_b: StochasticPolicy,
    pub spec: NaturalPolicySpec,
    pub pi_e: StochasticPolicy,
    pub truth: f64,
    pub behavior_value: f64,
    pub q_learning_seed: u64,
}

pub fn prepare(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<ExperimentSetup> {
    config.validate()?;
    let env = load_env(&config.env, config.gamma, base_dir)?;
    let spec = config.policy_spec.resolve(env.n_states(), env.n_actions())?;
    let q_learning_seed = derive_seed(config.master_seed, 0);
    let (pi_b, _) = q_learning(&env, &config.q_learning, q_learning_seed)?;
    let p_b = stationary_distribution(&env, &pi_b)?;
    let mdp = env.with_sampling_dist(p_b)?;
    let pi_e = spec.evaluation_policy(&pi_b)?;
    let truth = exact_value_discounted(&mdp, &pi_e)?;
    let behavior_value = exact_value_discounted(&mdp, &pi_b)?;
    Ok(ExperimentSetup { mdp, pi_b, spec, pi_e, truth, behavior_value, q_learning_seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub estimator: String,
    pub scenario: String,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
}

impl MseTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, estimator: &str, horizon: usize) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.horizon == horizon)
    }
}

fn csv_error(e: csv::Error) -> OpeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => OpeError::Io(io),
        other => OpeError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// MSE of squared errors with a normal-approximation 95% interval, the lower
/// end clamped at zero.
pub fn mse_with_ci(squared_errors: &[f64]) -> (f64, f64, f64) {
    let n = squared_errors.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mse = squared_errors.iter().sum::<f64>() / n as f64;
    let half = if n > 1 {
        let var = squared_errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    (mse, (mse - half).max(0.0), mse + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub estimator: String,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub replication: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub truth: f64,
    pub behavior_value: f64,
    pub q_learning_seed: u64,
    pub table: MseTable,
    pub records: Vec<ReplicationRecord>,
}

pub fn replication_stream(horizon_index: usize, replication: usize) -> u64 {
    1 + ((horizon_index as u64) << 32) + replication as u64
}

/// Runs every `(H, replication)` cell in parallel and aggregates in index
/// order. Estimator failures are recorded, not raised.
pub fn run_experiment(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<ExperimentResult> {
    let setup = prepare(config, base_dir)?;
    run_prepared(config, &setup)
}

pub fn run_prepared(config: &ExperimentConfig, setup: &ExperimentSetup) -> Result<ExperimentResult> {
    let mdp = &setup.mdp;
    let p_b = mdp.sampling_dist().expect("set in prepare").to_vec();
    let oracle = match config.nuisances {
        NuisanceMode::Oracle => {
            Some(Arc::new(NuisanceSet::oracle_stationary(mdp, &setup.pi_b, &setup.spec, &p_b)?))
        }
        NuisanceMode::Estimated => None,
    };
    let d = Discounted { gamma: config.gamma, p_e1: mdp.initial_dist() };
    let cells: Vec<(usize, usize)> = (0..config.horizons.len())
        .flat_map(|h| (0..config.replications).map(move |r| (h, r)))
        .collect();
    let per_cell: Vec<Vec<ReplicationRecord>> = cells
        .par_iter()
        .map(|&(h_idx, rep)| {
            let horizon = config.horizons[h_idx];
            let stream = replication_stream(h_idx, rep);
            let seed = derive_seed(config.master_seed, stream);
            let record = |kind: EstimatorKind, out: Result<f64>| ReplicationRecord {
                estimator: kind.name().to_string(),
                horizon,
                replication: rep,
                seed,
                estimate: out.as_ref().ok().copied(),
                error: out.err().map(|e| e.to_string()),
            };
            let data = match simulate_stationary(mdp, &setup.pi_b, horizon, 0, seed) {
                Ok(x) => x,
                Err(e) => {
                    let msg = e.to_string();
                    return config
                        .estimators
                        .iter()
                        .map(|&k| record(k, Err(OpeError::config("simulation", msg.clone()))))
                        .collect();
                }
            };
            let mut opts = EstimatorOptions::new(mdp.n_states(), mdp.n_actions()).with_k(config.k).with_seed(seed ^ 1);
            if let Some(set) = &oracle {
                opts.nuisances = NuisanceSource::Oracle(set.clone());
            }
            opts.corruption = config.corruption.map(|c| c.for_stream(stream));
            opts.behavior = Some(setup.pi_b.clone());
            config
                .estimators
                .iter()
                .map(|&kind| record(kind, run_estimator(kind, &data, &setup.spec, Some(d), &opts).map(|r| r.estimate)))
                .collect()
        })
        .collect();
    let records: Vec<ReplicationRecord> = per_cell.into_iter().flatten().collect();
    let scenario = config.scenario().to_string();
    let mut table = MseTable::default();
    for &horizon in &config.horizons {
        for kind in &config.estimators {
            let cell: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.horizon == horizon && r.estimator == kind.name()).collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.estimate).map(|x| (x - setup.truth).powi(2)).collect();
            let (mse, ci_low, ci_high) = mse_with_ci(&errors);
            table.rows.push(MseRow {
                estimator: kind.name().to_string(),
                scenario: scenario.clone(),
                horizon,
                mse,
                ci_low,
                ci_high,
                replications: errors.len(),
                failures: cell.len() - errors.len(),
            });
        }
    }
    Ok(ExperimentResult {
        scenario,
        truth: setup.truth,
        behavior_value: setup.behavior_value,
        q_learning_seed: setup.q_learning_seed,
        table,
        records,
    })
}
