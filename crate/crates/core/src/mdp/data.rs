use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub s: usize,
    pub a: usize,
    pub r: f64,
}

/// One finite-horizon episode `(s_1, a_1, r_1, ..., s_H, a_H, r_H, s_{H+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal_state: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// State at 0-based time `t`, with `t == H` giving the terminal state.
    #[inline]
    pub fn state(&self, t: usize) -> usize {
        if t < self.steps.len() {
            self.steps[t].s
        } else {
            self.terminal_state
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|x| x.r).sum()
    }
}

/// A single `(s, a, r, s', a')` transition from stationary behavior data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionTuple {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub a_next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "records", rename_all = "snake_case")]
pub enum DatasetKind {
    Trajectories(Vec<Trajectory>),
    Transitions(Vec<TransitionTuple>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub data: DatasetKind,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn trajectories(records: Vec<Trajectory>, seed: Option<u64>) -> Result<Self> {
        if records.is_empty() {
            return Err(OpeError::EmptyDataset);
        }
        Ok(Dataset { data: DatasetKind::Trajectories(records), seed })
    }

    pub fn transitions(records: Vec<TransitionTuple>, seed: Option<u64>) -> Result<Self> {
        if records.is_empty() {
            return Err(OpeError::EmptyDataset);
        }
        Ok(Dataset { data: DatasetKind::Transitions(records), seed })
    }

    pub fn len(&self) -> usize {
        match &self.data {
            DatasetKind::Trajectories(v) => v.len(),
            DatasetKind::Transitions(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        match &self.data {
            DatasetKind::Trajectories(v) => {
                Dataset::trajectories(idx.iter().map(|&i| v[i].clone()).collect(), self.seed)
            }
            DatasetKind::Transitions(v) => {
                Dataset::transitions(idx.iter().map(|&i| v[i]).collect(), self.seed)
            }
        }
    }

    pub fn as_trajectories(&self) -> Result<&[Trajectory]> {
        match &self.data {
            DatasetKind::Trajectories(v) => Ok(v),
            _ => Err(OpeError::WrongDataset { expected: "trajectories" }),
        }
    }

    pub fn as_transitions(&self) -> Result<&[TransitionTuple]> {
        match &self.data {
            DatasetKind::Transitions(v) => Ok(v),
            _ => Err(OpeError::WrongDataset { expected: "transitions" }),
        }
    }
}
