use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::policy::StochasticPolicy;
use crate::mdp::simulate::rng_from_seed;
use crate::nuisance::set::NuisanceSet;
use crate::tables::QTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionTarget {
    Q,
    W,
    WStar,
    PiB,
}

/// I.i.d. Gaussian noise added to one nuisance table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub target: CorruptionTarget,
    pub noise_mean: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(OpeError::config("corruption.noise_sd", "must be finite and >= 0"));
        }
        if !self.noise_mean.is_finite() {
            return Err(OpeError::config("corruption.noise_mean", "must be finite"));
        }
        Ok(())
    }

    /// Copy with a seed derived from `(seed, stream)`, for per-fold noise.
    pub fn for_stream(&self, stream: u64) -> Self {
        CorruptionSpec { seed: derive_seed(self.seed, stream), ..*self }
    }
}

/// SplitMix64 mixing of a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adds seeded `N(noise_mean, noise_sd²)` noise to the target table and
/// re-derives `π̂^e`, `η̂`, `v̂`. Behavior-policy noise is added to the logits
/// of the supported actions, so rows stay on the simplex and zeros stay zero.
pub fn corrupt(nuisances: &NuisanceSet, spec: &CorruptionSpec) -> Result<NuisanceSet> {
    spec.validate()?;
    let normal = Normal::new(spec.noise_mean, spec.noise_sd)
        .map_err(|e| OpeError::config("corruption.noise_sd", e.to_string()))?;
    let mut rng = rng_from_seed(spec.seed);
    let mut noisy = |x: f64| x + normal.sample(&mut rng);
    match spec.target {
        CorruptionTarget::Q => {
            let q = nuisances
                .q_tables()
                .iter()
                .map(|t| {
                    let values = t.values().iter().map(|&x| noisy(x)).collect();
                    QTable::from_vec(t.n_states(), t.n_actions(), values)
                })
                .collect::<Result<Vec<_>>>()?;
            nuisances.with_q(q)
        }
        CorruptionTarget::W | CorruptionTarget::WStar => {
            let want_stationary = spec.target == CorruptionTarget::WStar;
            if nuisances.is_stationary() != want_stationary {
                return Err(OpeError::config(
                    "corruption.target",
                    if want_stationary { "w_star needs stationary nuisances" } else { "w needs finite-horizon nuisances" },
                ));
            }
            let w = nuisances
                .w_slices()
                .iter()
                .map(|slice| slice.iter().map(|&x| noisy(x)).collect())
                .collect();
            nuisances.with_w(w)
        }
        CorruptionTarget::PiB => {
            let pi_b = nuisances.pi_b();
            let (ns, na) = (pi_b.n_states(), pi_b.n_actions());
            let tables = (0..pi_b.n_tables())
                .map(|t| {
                    let mut table = Vec::with_capacity(ns * na);
                    for s in 0..ns {
                        table.extend(perturb_logits(pi_b.probs(t, s), &mut noisy));
                    }
                    table
                })
                .collect();
            nuisances.with_pi_b(StochasticPolicy::from_tables_unchecked(ns, na, tables))
        }
    }
}

/// Adds seeded `N(noise_mean, noise_sd²)` noise to every entry of `values`.
pub fn add_noise(values: &mut [f64], spec: &CorruptionSpec) -> Result<()> {
    spec.validate()?;
    let normal = Normal::new(spec.noise_mean, spec.noise_sd)
        .map_err(|e| OpeError::config("corruption.noise_sd", e.to_string()))?;
    let mut rng = rng_from_seed(spec.seed);
    for x in values {
        *x += normal.sample(&mut rng);
    }
    Ok(())
}

/// `softmax(log p + noise)` over the support of `p`.
pub fn perturb_logits(row: &[f64], mut noise: impl FnMut(f64) -> f64) -> Vec<f64> {
    let logits: Vec<f64> = row
        .iter()
        .map(|&p| if p > 0.0 { noise(p.ln()) } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|x| x / z).collect()
}
