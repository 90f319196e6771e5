use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};

use nsp_ope::bounds::{bound_discounted, bound_finite, EfficiencyBounds, Estimand};
use nsp_ope::estimators::{run_estimator, write_reports_csv, Discounted, EstimateReport, EstimatorKind, EstimatorOptions};
use nsp_ope::experiments::{load_env, prepare, run_prepared, ExperimentConfig};
use nsp_ope::io::{read_dataset_jsonl, write_dataset_jsonl, DatasetHeader, PolicyFile, RecordKind};
use nsp_ope::selftest::run_selftest;
use nsp_ope::{
    exact_value_discounted, exact_value_finite, simulate_finite, simulate_iid_transitions, simulate_stationary,
    stationary_distribution, Flavor, StochasticPolicy, TabularDecisionProcess,
};

use crate::manifest::{manifest_path, InputSet, Manifest};
use crate::{BoundsArgs, EstimateArgs, Format, Globals, Sampler, SelftestArgs, SimulateArgs};

/// Exit code 1 for bad input, 2 for failures after validation.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Compute(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Compute(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Compute(e) => e,
        }
    }
}

trait Phase<T> {
    fn config(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

fn bad(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{msg}"))
}

fn read_input(path: &Path, inputs: &mut InputSet) -> Result<String, Failure> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display())).config()?;
    inputs.add(path, &bytes);
    String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display())).config()
}

fn load_mdp(path: &Path, inputs: &mut InputSet) -> Result<TabularDecisionProcess, Failure> {
    let text = read_input(path, inputs)?;
    TabularDecisionProcess::from_json(&text).with_context(|| format!("invalid process file {}", path.display())).config()
}

fn load_policy(path: &Path, inputs: &mut InputSet) -> Result<PolicyFile, Failure> {
    let text = read_input(path, inputs)?;
    PolicyFile::from_json(&text).with_context(|| format!("invalid policy file {}", path.display())).config()
}

fn check_behavior(mdp: &TabularDecisionProcess, pi_b: &StochasticPolicy) -> Result<(), Failure> {
    pi_b.check_dims(mdp.n_states(), mdp.n_actions(), mdp.horizon().ok()).context("behavior").config()
}

fn format_or(g: &Globals, default: Format) -> Format {
    g.format.unwrap_or(default)
}

/// Writes the payload to `--output` (or stdout) and the manifest beside it
/// (or to stderr).
fn emit(g: &Globals, payload: &[u8], manifest: &Manifest) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(manifest).compute()?;
    match &g.output {
        Some(path) => {
            fs::write(path, payload).with_context(|| format!("cannot write {}", path.display())).compute()?;
            let mpath = manifest_path(path);
            fs::write(&mpath, text + "\n").with_context(|| format!("cannot write {}", mpath.display())).compute()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(payload).and_then(|_| out.flush()).compute()?;
            eprintln!("{}", serde_json::to_string(manifest).compute()?);
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut out = serde_json::to_vec_pretty(value).compute()?;
    out.push(b'\n');
    Ok(out)
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).compute()?;
    for row in rows {
        w.write_record(&row).compute()?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}")).compute()
}

/// Sampling distribution of a discounted process: the declared one, or the
/// stationary distribution of the behavior policy.
fn sampling_dist(mdp: &TabularDecisionProcess, pi_b: &StochasticPolicy) -> Result<(Vec<f64>, &'static str), Failure> {
    match mdp.sampling_dist() {
        Some(p) => Ok((p.to_vec(), "declared")),
        None => Ok((stationary_distribution(mdp, pi_b).compute()?, "stationary_behavior")),
    }
}

pub fn simulate(g: &Globals, a: &SimulateArgs) -> Result<(), Failure> {
    let mut inputs = InputSet::new();
    let mdp = load_mdp(&a.mdp, &mut inputs)?;
    let policy = load_policy(&a.policy, &mut inputs)?;
    let pi_b = policy.behavior().config()?;
    check_behavior(&mdp, pi_b)?;
    policy.resolve_spec(mdp.n_states(), mdp.n_actions()).context("spec").config()?;
    if a.n == 0 {
        return Err(bad("--n: must be >= 1"));
    }
    if g.format == Some(Format::Csv) {
        return Err(bad("--format: simulate writes JSON lines only"));
    }
    let finite = matches!(mdp.flavor(), Flavor::FiniteHorizon { .. });
    let sampler = a.sampler.unwrap_or(if finite { Sampler::Episodes } else { Sampler::Chain });
    if finite != (sampler == Sampler::Episodes) {
        return Err(bad(format!("--sampler: {sampler:?} does not fit a {} process", if finite { "finite-horizon" } else { "discounted" })));
    }
    let seed = g.seed.unwrap_or(0);

    let data = match sampler {
        Sampler::Episodes => simulate_finite(&mdp, pi_b, a.n, seed).compute()?,
        Sampler::Chain => simulate_stationary(&mdp, pi_b, a.n, a.burn_in, seed).compute()?,
        Sampler::Iid => {
            let (p_b, _) = sampling_dist(&mdp, pi_b)?;
            simulate_iid_transitions(&mdp, pi_b, &p_b, a.n, seed).compute()?
        }
    };
    let header = DatasetHeader::for_dataset(&data, &mdp);
    let mut payload = Vec::new();
    write_dataset_jsonl(&mut payload, &header, &data).compute()?;
    let params = json!({ "n": a.n, "sampler": format!("{sampler:?}").to_lowercase(), "burn_in": a.burn_in });
    emit(g, &payload, &inputs.manifest("simulate", Some(seed), params, g.output.as_deref()))
}

#[derive(Serialize)]
struct BoundsOutput {
    flavor: &'static str,
    /// Exact value of the evaluation policy.
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_dist: Option<&'static str>,
    bounds: Vec<EfficiencyBounds>,
}

pub fn bounds(g: &Globals, a: &BoundsArgs) -> Result<(), Failure> {
    let mut inputs = InputSet::new();
    let mdp = load_mdp(&a.mdp, &mut inputs)?;
    let policy = load_policy(&a.policy, &mut inputs)?;
    let pi_b = policy.behavior().config()?;
    check_behavior(&mdp, pi_b)?;
    let spec = policy.resolve_spec(mdp.n_states(), mdp.n_actions()).context("spec").config()?;
    let pi_e = spec.evaluation_policy(pi_b).context("spec").config()?;

    let output = if mdp.horizon().is_ok() {
        let estimands = if spec.is_tilting() { [Estimand::Ti1, Estimand::Pr] } else { [Estimand::Mo1, Estimand::Pr] };
        let bounds = estimands.iter().map(|&e| bound_finite(&mdp, pi_b, &spec, e)).collect::<Result<_, _>>().compute()?;
        BoundsOutput { flavor: "finite", value: exact_value_finite(&mdp, &pi_e).compute()?, sampling_dist: None, bounds }
    } else {
        let (p_b, source) = sampling_dist(&mdp, pi_b)?;
        let estimands: &[Estimand] =
            if spec.is_tilting() { &[Estimand::Ti2, Estimand::Pr2, Estimand::V2] } else { &[Estimand::Mo2, Estimand::Pr2] };
        let bounds =
            estimands.iter().map(|&e| bound_discounted(&mdp, pi_b, &spec, &p_b, e)).collect::<Result<_, _>>().compute()?;
        BoundsOutput {
            flavor: "discounted",
            value: exact_value_discounted(&mdp, &pi_e).compute()?,
            sampling_dist: Some(source),
            bounds,
        }
    };
    if g.verbose > 0 {
        eprintln!("{} process, J = {}", output.flavor, output.value);
    }
    let payload = match format_or(g, Format::Json) {
        Format::Json => to_json(&output)?,
        Format::Csv => csv_rows(
            &["estimand", "value", "inflation_vs_prespecified", "upper_bound_cap", "C", "C_prime"],
            output.bounds.iter().map(|b| {
                vec![
                    serde_json::to_value(b.estimand).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    format!("{:e}", b.value),
                    format!("{:e}", b.inflation_vs_prespecified),
                    b.upper_bound_cap.map(|x| format!("{x:e}")).unwrap_or_default(),
                    format!("{:e}", b.c),
                    format!("{:e}", b.c_prime),
                ]
            }),
        )?,
    };
    emit(g, &payload, &inputs.manifest("bounds", None, Value::Null, g.output.as_deref()))
}

pub fn estimate(g: &Globals, a: &EstimateArgs) -> Result<(), Failure> {
    let mut inputs = InputSet::new();
    let text = read_input(&a.data, &mut inputs)?;
    let (header, data) =
        read_dataset_jsonl(text.as_bytes()).with_context(|| format!("invalid dataset {}", a.data.display())).config()?;
    let policy = load_policy(&a.policy, &mut inputs)?;
    let (ns, na) = (header.n_states, header.n_actions);
    let spec = policy.resolve_spec(ns, na).context("spec").config()?;
    let kinds: Vec<EstimatorKind> =
        a.estimator.iter().map(|s| s.trim().parse::<EstimatorKind>()).collect::<Result<_, _>>().config()?;
    if a.k == 0 || a.k > data.len() {
        return Err(bad(format!("--K: must lie in 1..={} (the number of records)", data.len())));
    }
    let trajectories = header.kind == RecordKind::Trajectories;
    for kind in &kinds {
        if kind.wants_trajectories().is_some_and(|t| t != trajectories) {
            let what = if trajectories { "trajectory" } else { "transition" };
            return Err(bad(format!("--estimator: {kind} does not accept {what} data")));
        }
    }
    let (gamma, p_e1) = match &a.mdp {
        Some(path) => {
            let mdp = load_mdp(path, &mut inputs)?;
            if (mdp.n_states(), mdp.n_actions()) != (ns, na) {
                return Err(bad("--mdp: state or action count differs from the dataset header"));
            }
            (mdp.gamma().ok(), mdp.gamma().ok().map(|_| mdp.initial_dist().to_vec()))
        }
        None => (header.gamma, header.initial_dist.clone()),
    };
    let discounted = match (trajectories, gamma, &p_e1) {
        (true, _, _) => None,
        (false, Some(gamma), Some(p)) if p.len() == ns => Some(Discounted { gamma, p_e1: p }),
        (false, Some(_), Some(_)) => return Err(bad("initial_dist: length differs from n_states")),
        _ => return Err(bad("gamma: transition data needs gamma and initial_dist from the header or --mdp")),
    };
    let seed = g.seed.unwrap_or(0);
    let mut opts = EstimatorOptions::new(ns, na).with_k(a.k).with_seed(seed);
    if kinds.contains(&EstimatorKind::V2) {
        let pi_b = policy.behavior().context("V2 needs the behavior policy").config()?;
        pi_b.check_dims(ns, na, None).context("behavior").config()?;
        opts.behavior = Some(pi_b.clone());
    }

    let reports: Vec<EstimateReport> =
        kinds.iter().map(|&kind| run_estimator(kind, &data, &spec, discounted, &opts)).collect::<Result<_, _>>().compute()?;
    if g.verbose > 0 {
        for r in &reports {
            eprintln!("{}: {}", r.estimator, r.estimate);
        }
    }
    let payload = match format_or(g, Format::Json) {
        Format::Json => to_json(&reports)?,
        Format::Csv => {
            let mut buf = Vec::new();
            write_reports_csv(&reports, &mut buf).compute()?;
            buf
        }
    };
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    let params = json!({ "estimators": names, "K": a.k });
    emit(g, &payload, &inputs.manifest("estimate", Some(seed), params, g.output.as_deref()))
}

pub fn experiment(g: &Globals) -> Result<(), Failure> {
    let path = g.config.as_deref().ok_or_else(|| bad("--config: experiment needs a configuration file"))?;
    let mut inputs = InputSet::new();
    let text = read_input(path, &mut inputs)?;
    let mut config = ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display())).config()?;
    if let Some(seed) = g.seed {
        config.master_seed = seed;
    }
    config.validate().config()?;
    let base_dir = path.parent();
    load_env(&config.env, config.gamma, base_dir).config()?;

    let setup = prepare(&config, base_dir).compute()?;
    if g.verbose > 0 {
        eprintln!("truth J = {}, behavior value = {}", setup.truth, setup.behavior_value);
    }
    let result = run_prepared(&config, &setup).compute()?;
    let payload = match format_or(g, Format::Csv) {
        Format::Csv => {
            let mut buf = Vec::new();
            result.table.write_csv(&mut buf).compute()?;
            buf
        }
        Format::Json => to_json(&result)?,
    };
    let params = serde_json::to_value(&config).compute()?;
    let mut manifest = inputs.manifest("experiment", Some(config.master_seed), params, g.output.as_deref());
    manifest.details = json!({
        "scenario": result.scenario,
        "truth": result.truth,
        "behavior_value": result.behavior_value,
        "q_learning_seed": result.q_learning_seed,
        "replication_seeds": "derive_seed(master_seed, 1 + (horizon_index << 32) + replication)",
    });
    emit(g, &payload, &manifest)
}

pub fn selftest(g: &Globals, a: &SelftestArgs) -> Result<(), Failure> {
    if a.instances == 0 {
        return Err(bad("--instances: must be >= 1"));
    }
    let seed = g.seed.unwrap_or(0);
    let report = run_selftest(seed, a.instances).compute()?;
    let payload = match format_or(g, Format::Json) {
        Format::Json => to_json(&report)?,
        Format::Csv => csv_rows(
            &["check", "instances", "max_error", "tolerance", "passed"],
            report.checks.iter().map(|c| {
                vec![
                    c.name.clone(),
                    c.instances.to_string(),
                    format!("{:e}", c.max_error),
                    format!("{:e}", c.tolerance),
                    c.passed.to_string(),
                ]
            }),
        )?,
    };
    let params = json!({ "instances": a.instances });
    emit(g, &payload, &InputSet::new().manifest("selftest", Some(seed), params, g.output.as_deref()))?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Compute(anyhow!("selftest failed")))
    }
}
