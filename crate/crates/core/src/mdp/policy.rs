use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::model::check_distribution;

/// Per-time (or single stationary) state-conditional action distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct StochasticPolicy {
    n_states: usize,
    n_actions: usize,
    /// `[time][s * n_actions + a]`; one table when stationary.
    tables: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// `probs[t][s][a]`
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawPolicy> for StochasticPolicy {
    type Error = OpeError;
    fn try_from(raw: RawPolicy) -> Result<Self> {
        let mut tables = Vec::with_capacity(raw.probs.len());
        for (t, rows) in raw.probs.into_iter().enumerate() {
            if rows.len() != raw.n_states || rows.iter().any(|r| r.len() != raw.n_actions) {
                return Err(OpeError::Dimension(format!(
                    "policy table {t} must be {} x {}",
                    raw.n_states, raw.n_actions
                )));
            }
            tables.push(rows.into_iter().flatten().collect());
        }
        StochasticPolicy::from_tables(raw.n_states, raw.n_actions, tables)
    }
}

impl From<StochasticPolicy> for RawPolicy {
    fn from(p: StochasticPolicy) -> Self {
        RawPolicy {
            n_states: p.n_states,
            n_actions: p.n_actions,
            probs: p
                .tables
                .iter()
                .map(|t| t.chunks(p.n_actions).map(<[f64]>::to_vec).collect())
                .collect(),
        }
    }
}

impl StochasticPolicy {
    /// Validates flat `[s * n_actions + a]` tables, one per time step.
    pub fn from_tables(n_states: usize, n_actions: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(OpeError::Dimension("policy needs at least one table".into()));
        }
        for (t, table) in tables.iter().enumerate() {
            if table.len() != n_states * n_actions {
                return Err(OpeError::Dimension(format!(
                    "policy table {t} has {} entries, expected {}",
                    table.len(),
                    n_states * n_actions
                )));
            }
            for (s, row) in table.chunks(n_actions).enumerate() {
                check_distribution(row, &format!("policy[t={t}][s={s}]"))?;
            }
        }
        Ok(StochasticPolicy { n_states, n_actions, tables })
    }

    /// Builds from tables that are valid up to rounding; rows are renormalized.
    pub(crate) fn from_tables_unchecked(
        n_states: usize,
        n_actions: usize,
        mut tables: Vec<Vec<f64>>,
    ) -> Self {
        for table in &mut tables {
            for row in table.chunks_mut(n_actions) {
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= total);
            }
        }
        StochasticPolicy { n_states, n_actions, tables }
    }

    pub fn stationary(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(OpeError::Dimension("ragged policy rows".into()));
        }
        Self::from_tables(n_states, n_actions, vec![rows.into_iter().flatten().collect()])
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            n_states,
            n_actions,
            tables: vec![vec![1.0 / n_actions as f64; n_states * n_actions]],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of stored tables (1 when stationary).
    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.tables.len() == 1
    }

    #[inline]
    fn table(&self, t: usize) -> &[f64] {
        if self.tables.len() == 1 {
            &self.tables[0]
        } else {
            &self.tables[t]
        }
    }

    /// Action distribution at time `t` in state `s`.
    #[inline]
    pub fn probs(&self, t: usize, s: usize) -> &[f64] {
        let na = self.n_actions;
        &self.table(t)[s * na..(s + 1) * na]
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.table(t)[s * self.n_actions + a]
    }

    /// Checks the policy covers `horizon` steps of an `n_states x n_actions` process.
    pub fn check_dims(&self, n_states: usize, n_actions: usize, horizon: Option<usize>) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(OpeError::Dimension(format!(
                "policy is {} x {}, process is {n_states} x {n_actions}",
                self.n_states, self.n_actions
            )));
        }
        if let Some(h) = horizon {
            if self.tables.len() != 1 && self.tables.len() < h {
                return Err(OpeError::Dimension(format!(
                    "policy has {} time steps, horizon is {h}",
                    self.tables.len()
                )));
            }
        } else if self.tables.len() != 1 {
            return Err(OpeError::Dimension(
                "stationary process needs a stationary policy".into(),
            ));
        }
        Ok(())
    }

    /// ε-softened greedy policy: `(1-ε)·1[a = greedy(s)] + ε/|A|`.
    pub fn softened_greedy(greedy: &[usize], n_actions: usize, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(OpeError::config("epsilon_soften", "must lie in [0, 1]"));
        }
        let n_states = greedy.len();
        let mut table = vec![epsilon / n_actions as f64; n_states * n_actions];
        for (s, &a) in greedy.iter().enumerate() {
            if a >= n_actions {
                return Err(OpeError::Dimension(format!("greedy action {a} out of range")));
            }
            table[s * n_actions + a] += 1.0 - epsilon;
        }
        Ok(StochasticPolicy::from_tables_unchecked(n_states, n_actions, vec![table]))
    }
}
