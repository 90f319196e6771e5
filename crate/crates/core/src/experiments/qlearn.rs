use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::model::TabularDecisionProcess;
use crate::mdp::policy::StochasticPolicy;
use crate::mdp::simulate::{rng_from_seed, sample_index};
use crate::tables::QTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningConfig {
    /// Full sweeps over all `(s, a)` pairs.
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_soften: f64,
}

fn default_learning_rate() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig { iterations: 150, learning_rate: default_learning_rate(), epsilon_soften: default_epsilon() }
    }
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(OpeError::config("q_learning.iterations", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(OpeError::config("q_learning.learning_rate", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.epsilon_soften) {
            return Err(OpeError::config("q_learning.epsilon_soften", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Greedy action per state; ties go to the lowest action index.
pub fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.n_states())
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for (a, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Sampled q-learning on a discounted process. Each iteration sweeps every
/// `(s, a)` in index order, draws `r` and `s'` from the model and applies
/// `q ← q + lr·(r + γ max q(s', ·) − q)`. Returns the learned table and the
/// ε-softened greedy policy.
pub fn q_learning(
    mdp: &TabularDecisionProcess,
    config: &QLearningConfig,
    seed: u64,
) -> Result<(StochasticPolicy, QTable)> {
    config.validate()?;
    let gamma = mdp.gamma()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = rng_from_seed(seed);
    let mut q = QTable::zeros(ns, na);
    let mut best = vec![0.0; ns];
    for _ in 0..config.iterations {
        for s in 0..ns {
            for a in 0..na {
                let row = mdp.next_dist(0, s, a);
                let s_next = row.next[sample_index(&mut rng, &row.prob)];
                let dist = mdp.reward_dist(0, s, a);
                let r = if dist.support.len() == 1 {
                    dist.support[0].value
                } else {
                    let probs: Vec<f64> = dist.support.iter().map(|x| x.prob).collect();
                    dist.support[sample_index(&mut rng, &probs)].value
                };
                let target = r + gamma * best[s_next];
                let old = q.get(s, a);
                q.set(s, a, old + config.learning_rate * (target - old));
                best[s] = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    let policy = StochasticPolicy::softened_greedy(&greedy_actions(&q), na, config.epsilon_soften)?;
    Ok((policy, q))
}
