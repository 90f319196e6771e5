//! Runtime invariant suite: exact expectations over enumerated trajectories
//! and transitions on random small instances, compared with the closed-form
//! bounds and values. Used by the `selftest` CLI subcommand.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_discounted, bound_finite, eif_trajectory, eif_transition, Estimand};
use crate::error::Result;
use crate::estimators::{phi_mo1, phi_ti1};
use crate::mdp::data::{Step, Trajectory, TransitionTuple};
use crate::mdp::exact::exact_value_finite;
use crate::mdp::model::{Flavor, RewardDist, TabularDecisionProcess};
use crate::mdp::policy::StochasticPolicy;
use crate::mdp::simulate::rng_from_seed;
use crate::nuisance::NuisanceSet;
use crate::policies::NaturalPolicySpec;
use crate::tables::QTable;

pub const SELFTEST_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<SelftestCheck>,
    pub passed: bool,
}

struct Tally {
    name: &'static str,
    instances: usize,
    max_error: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, instances: 0, max_error: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        // NaN must fail the check.
        self.max_error = if err.is_nan() { f64::INFINITY } else { self.max_error.max(err.abs()) };
    }

    fn finish(self) -> SelftestCheck {
        SelftestCheck {
            name: self.name.into(),
            instances: self.instances,
            max_error: self.max_error,
            tolerance: SELFTEST_TOLERANCE,
            passed: self.instances > 0 && self.max_error <= SELFTEST_TOLERANCE,
        }
    }
}

fn simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64, sparse: bool) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|_| if sparse && rng.random::<f64>() < 0.3 { 0.0 } else { floor + rng.random::<f64>() })
            .collect();
        let z: f64 = raw.iter().sum();
        if z > 0.1 {
            return raw.into_iter().map(|x| x / z).collect();
        }
    }
}

fn reward(rng: &mut ChaCha8Rng) -> RewardDist {
    let atoms = rng.random_range(1..=2);
    let probs = simplex(rng, atoms, 0.2, false);
    let pairs: Vec<(f64, f64)> = probs.into_iter().map(|p| (rng.random::<f64>(), p)).collect();
    RewardDist::from_pairs(&pairs)
}

type Kernels = (Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<RewardDist>>>);

fn kernels(rng: &mut ChaCha8Rng, ns: usize, na: usize, count: usize) -> Kernels {
    let transition = (0..count)
        .map(|_| (0..ns).map(|_| (0..na).map(|_| simplex(rng, ns, 0.0, true)).collect()).collect())
        .collect();
    let rewards = (0..count).map(|_| (0..ns).map(|_| (0..na).map(|_| reward(rng)).collect()).collect()).collect();
    (transition, rewards)
}

fn specs(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Result<(NaturalPolicySpec, NaturalPolicySpec)> {
    let tilt = NaturalPolicySpec::tilting((0..na).map(|_| rng.random_range(0.5..3.0)).collect())?;
    let tau = (0..ns)
        .map(|_| {
            let mut perm: Vec<usize> = (0..na).collect();
            perm.shuffle(rng);
            perm
        })
        .collect();
    Ok((tilt, NaturalPolicySpec::modified(tau)?))
}

fn enumerate_trajectories(mdp: &TabularDecisionProcess, pi: &StochasticPolicy, horizon: usize) -> Vec<(f64, Trajectory)> {
    let mut out = Vec::new();
    let mut stack: Vec<(f64, usize, Vec<Step>)> = mdp
        .initial_dist()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| (p, s, Vec::new()))
        .collect();
    while let Some((prob, s, steps)) = stack.pop() {
        let t = steps.len();
        if t == horizon {
            out.push((prob, Trajectory { steps, terminal_state: s }));
            continue;
        }
        for a in 0..mdp.n_actions() {
            let pa = pi.prob(t, s, a);
            for atom in &mdp.reward_dist(t, s, a).support {
                for s2 in 0..mdp.n_states() {
                    let p = prob * pa * atom.prob * mdp.transition_prob(t, s, a, s2);
                    if p > 0.0 {
                        let mut next = steps.clone();
                        next.push(Step { s, a, r: atom.value });
                        stack.push((p, s2, next));
                    }
                }
            }
        }
    }
    out
}

fn enumerate_transitions(mdp: &TabularDecisionProcess, pi: &StochasticPolicy, p_b: &[f64]) -> Vec<(f64, TransitionTuple)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            for atom in &mdp.reward_dist(0, s, a).support {
                for s_next in 0..ns {
                    for a_next in 0..na {
                        let p = p_b[s]
                            * pi.prob(0, s, a)
                            * atom.prob
                            * mdp.transition_prob(0, s, a, s_next)
                            * pi.prob(0, s_next, a_next);
                        if p > 0.0 {
                            out.push((p, TransitionTuple { s, a, r: atom.value, s_next, a_next }));
                        }
                    }
                }
            }
        }
    }
    out
}

fn mean_var(items: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let items: Vec<(f64, f64)> = items.collect();
    let mean: f64 = items.iter().map(|(p, x)| p * x).sum();
    let var = items.iter().map(|(p, x)| p * (x - mean).powi(2)).sum();
    (mean, var)
}

fn shifted_q(q: &[QTable], shift: f64) -> Vec<QTable> {
    q.iter()
        .map(|table| {
            let mut out = table.clone();
            for s in 0..out.n_states() {
                for a in 0..out.n_actions() {
                    out.set(s, a, table.get(s, a) + shift * (1.0 + (s + a) as f64));
                }
            }
            out
        })
        .collect()
}

/// Runs every check on `instances` random processes derived from `seed`.
pub fn run_selftest(seed: u64, instances: usize) -> Result<SelftestReport> {
    let mut finite_value = Tally::new("finite value: enumeration vs backward induction");
    let mut finite_mean = Tally::new("finite EIF mean is zero (TI1, MO1, PR)");
    let mut finite_bound = Tally::new("finite bound equals EIF variance (TI1, MO1, PR)");
    let mut finite_dr = Tally::new("finite scores unbiased with corrupted q (TI1, MO1)");
    let mut disc_mean = Tally::new("discounted transition-score mean is zero (TI2, MO2, PR2, V2)");
    let mut disc_bound = Tally::new("discounted bound equals EIF variance (TI2, MO2, PR2, V2)");

    for i in 0..instances {
        let mut rng = rng_from_seed(seed.wrapping_add(i as u64));
        let ns = rng.random_range(2..=4);
        let na = rng.random_range(2..=3);
        let horizon = rng.random_range(1..=3);
        let time_varying = rng.random::<bool>();
        let (transition, rewards) = kernels(&mut rng, ns, na, if time_varying { horizon } else { 1 });
        let initial = simplex(&mut rng, ns, 0.0, true);
        let mdp = TabularDecisionProcess::from_dense(
            ns,
            na,
            Flavor::FiniteHorizon { horizon, time_varying },
            transition,
            rewards,
            initial,
            None,
            1.0,
        )?;
        let tables = (0..horizon).map(|_| (0..ns).flat_map(|_| simplex(&mut rng, na, 0.3, false)).collect()).collect();
        let pi_b = StochasticPolicy::from_tables(ns, na, tables)?;
        let (tilt, modified) = specs(&mut rng, ns, na)?;
        let paths = enumerate_trajectories(&mdp, &pi_b, horizon);
        for (spec, estimands) in [(&tilt, &[Estimand::Ti1, Estimand::Pr][..]), (&modified, &[Estimand::Mo1][..])] {
            let oracle = NuisanceSet::oracle_finite(&mdp, &pi_b, spec)?;
            let j = exact_value_finite(&mdp, oracle.pi_e())?;
            let brute: f64 = enumerate_trajectories(&mdp, oracle.pi_e(), horizon)
                .iter()
                .map(|(p, x)| p * x.total_reward())
                .sum();
            finite_value.record(brute - j);
            for &estimand in estimands {
                let (mean, var) =
                    mean_var(paths.iter().map(|(p, x)| (*p, eif_trajectory(x, &oracle, estimand, j).unwrap_or(f64::NAN))));
                finite_mean.record(mean);
                finite_bound.record(bound_finite(&mdp, &pi_b, spec, estimand)?.value - var);
            }
            let corrupted = oracle.with_q(shifted_q(oracle.q_tables(), 0.7))?;
            let score = if spec.is_tilting() { phi_ti1 } else { phi_mo1 };
            let (mean, _) = mean_var(paths.iter().map(|(p, x)| (*p, score(x, &corrupted))));
            finite_dr.record(mean - j);
        }

        let gamma = rng.random_range(0.5..0.95);
        let (transition, rewards) = kernels(&mut rng, ns, na, 1);
        let initial = simplex(&mut rng, ns, 0.0, true);
        let p_b = simplex(&mut rng, ns, 0.2, false);
        let mdp = TabularDecisionProcess::from_dense(
            ns,
            na,
            Flavor::StationaryDiscounted { gamma },
            transition,
            rewards,
            initial,
            Some(p_b.clone()),
            1.0,
        )?;
        let pi_b = StochasticPolicy::stationary((0..ns).map(|_| simplex(&mut rng, na, 0.3, false)).collect())?;
        let tuples = enumerate_transitions(&mdp, &pi_b, &p_b);
        let tilt_estimands = [Estimand::Ti2, Estimand::Pr2, Estimand::V2];
        for (spec, estimands) in [(&tilt, &tilt_estimands[..]), (&modified, &[Estimand::Mo2][..])] {
            let oracle = NuisanceSet::oracle_stationary(&mdp, &pi_b, spec, &p_b)?;
            for &estimand in estimands {
                let (mean, var) = mean_var(
                    tuples.iter().map(|(p, x)| (*p, eif_transition(x, &oracle, estimand, gamma).unwrap_or(f64::NAN))),
                );
                disc_mean.record(mean);
                disc_bound.record(bound_discounted(&mdp, &pi_b, spec, &p_b, estimand)?.value - var);
            }
        }
    }

    let checks: Vec<SelftestCheck> =
        [finite_value, finite_mean, finite_bound, finite_dr, disc_mean, disc_bound].into_iter().map(Tally::finish).collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(SelftestReport { seed, checks, passed })
}
