//! On-disk formats: JSON-lines datasets and policy files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::data::{Dataset, DatasetKind, Trajectory, TransitionTuple};
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;
use crate::policies::{NaturalPolicySpec, PolicySpecConfig};

pub const DATASET_FORMAT: &str = "nsp-ope-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Trajectories,
    Transitions,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub kind: RecordKind,
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Discount factor of the generating process (transition data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `p_e^(1)`, the initial distribution of the discounted value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dist: Option<Vec<f64>>,
}

impl DatasetHeader {
    /// Header describing `data` drawn from `mdp`.
    pub fn for_dataset(data: &Dataset, mdp: &TabularDecisionProcess) -> Self {
        let kind = match data.data {
            DatasetKind::Trajectories(_) => RecordKind::Trajectories,
            DatasetKind::Transitions(_) => RecordKind::Transitions,
        };
        let gamma = mdp.gamma().ok();
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            kind,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            seed: data.seed,
            gamma,
            initial_dist: gamma.map(|_| mdp.initial_dist().to_vec()),
        }
    }
}

pub fn write_dataset_jsonl<W: Write>(mut out: W, header: &DatasetHeader, data: &Dataset) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    match &data.data {
        DatasetKind::Trajectories(records) => {
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
        DatasetKind::Transitions(records) => {
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn check_state(x: usize, n: usize, line: usize, what: &str) -> Result<()> {
    if x >= n {
        return Err(OpeError::config(format!("line {line}"), format!("{what} {x} out of range (n = {n})")));
    }
    Ok(())
}

/// Reads a dataset file, validating every record against the header.
/// Blank lines are skipped.
pub fn read_dataset_jsonl<R: BufRead>(input: R) -> Result<(DatasetHeader, Dataset)> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |x| !x.trim().is_empty()));
    let (_, first) = lines.next().ok_or(OpeError::EmptyDataset)?;
    let header: DatasetHeader = serde_json::from_str(&first?)
        .map_err(|e| OpeError::config("line 1", format!("invalid dataset header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(OpeError::config("format", format!("expected {DATASET_FORMAT:?}, got {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(OpeError::config("version", format!("unsupported version {}", header.version)));
    }
    let (ns, na) = (header.n_states, header.n_actions);
    let data = match header.kind {
        RecordKind::Trajectories => {
            let mut records = Vec::new();
            for (i, line) in lines {
                let t: Trajectory = serde_json::from_str(&line?)
                    .map_err(|e| OpeError::config(format!("line {}", i + 1), e.to_string()))?;
                if let Some(first) = records.first().map(Trajectory::horizon) {
                    if t.horizon() != first {
                        return Err(OpeError::config(format!("line {}", i + 1), "trajectories must share one horizon"));
                    }
                }
                for st in &t.steps {
                    check_state(st.s, ns, i + 1, "state")?;
                    check_state(st.a, na, i + 1, "action")?;
                }
                check_state(t.terminal_state, ns, i + 1, "state")?;
                records.push(t);
            }
            Dataset::trajectories(records, header.seed)?
        }
        RecordKind::Transitions => {
            let mut records = Vec::new();
            for (i, line) in lines {
                let x: TransitionTuple = serde_json::from_str(&line?)
                    .map_err(|e| OpeError::config(format!("line {}", i + 1), e.to_string()))?;
                check_state(x.s, ns, i + 1, "state")?;
                check_state(x.s_next, ns, i + 1, "state")?;
                check_state(x.a, na, i + 1, "action")?;
                check_state(x.a_next, na, i + 1, "action")?;
                records.push(x);
            }
            Dataset::transitions(records, header.seed)?
        }
    };
    Ok((header, data))
}

/// Policy file: the behavior policy (optional for estimation from data) and
/// the natural-policy specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<StochasticPolicy>,
    pub spec: PolicySpecConfig,
}

impl PolicyFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve_spec(&self, n_states: usize, n_actions: usize) -> Result<NaturalPolicySpec> {
        let spec = self.spec.resolve(n_states, n_actions)?;
        spec.check_dims(n_states, n_actions)?;
        Ok(spec)
    }

    pub fn behavior(&self) -> Result<&StochasticPolicy> {
        self.behavior.as_ref().ok_or_else(|| OpeError::config("behavior", "the policy file has no behavior policy"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::data::Step;

    #[test]
    fn dataset_round_trips() {
        let records = vec![
            Trajectory { steps: vec![Step { s: 0, a: 1, r: 0.5 }], terminal_state: 1 },
            Trajectory { steps: vec![Step { s: 1, a: 0, r: 0.0 }], terminal_state: 0 },
        ];
        let data = Dataset::trajectories(records, Some(3)).unwrap();
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            kind: RecordKind::Trajectories,
            n_states: 2,
            n_actions: 2,
            seed: Some(3),
            gamma: None,
            initial_dist: None,
        };
        let mut buf = Vec::new();
        write_dataset_jsonl(&mut buf, &header, &data).unwrap();
        let (h, d) = read_dataset_jsonl(buf.as_slice()).unwrap();
        assert_eq!((h, d), (header, data));
    }

    #[test]
    fn out_of_range_record_names_the_line() {
        let text = "{\"format\":\"nsp-ope-dataset\",\"version\":1,\"kind\":\"transitions\",\"n_states\":2,\"n_actions\":2}\n\
                    {\"s\":0,\"a\":0,\"r\":1.0,\"s_next\":5,\"a_next\":0}\n";
        let err = read_dataset_jsonl(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
