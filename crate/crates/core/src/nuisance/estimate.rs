//! Tabular nuisance estimators: behavior policy, fitted-q iteration, state
//! ratios, and the stationary moment systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::linalg::{fixed_point, solve_dense, DENSE_LIMIT};
use crate::mdp::data::{Dataset, Trajectory};
use crate::mdp::exact::policy_average;
use crate::mdp::policy::StochasticPolicy;
use crate::nuisance::set::{Diagnostics, NuisanceSet};
use crate::nuisance::stats::{transition_stats, EpisodeStats, SampleStats};
use crate::policies::{cumulative_ratios, NaturalPolicySpec};
use crate::tables::QTable;

/// Residual tolerance of the empirical moment systems.
pub const MOMENT_TOL: f64 = 1e-8;

fn pi_b_table(stats: &[&SampleStats]) -> (Vec<f64>, usize) {
    let (ns, na) = (stats[0].n_states(), stats[0].n_actions());
    let mut table = vec![0.0; ns * na];
    let mut unseen = 0;
    for s in 0..ns {
        let total: f64 = stats.iter().map(|x| x.state_count(s)).sum();
        let row = &mut table[s * na..(s + 1) * na];
        if total > 0.0 {
            for (a, p) in row.iter_mut().enumerate() {
                *p = stats.iter().map(|x| x.count[x.cell(s, a)]).sum::<f64>() / total;
            }
        } else {
            unseen += 1;
            row.iter_mut().for_each(|p| *p = 1.0 / na as f64);
        }
    }
    (table, unseen)
}

/// How the behavior policy is estimated from trajectories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiBMode {
    /// One table per time step.
    #[default]
    PerTime,
    /// A single table pooled over time.
    Pooled,
}

/// `π̂^b(a|s) = count(s, a) / count(s)`, uniform on unseen states. Returns the
/// policy and the number of unseen `(t, s)` rows.
pub fn pi_b_from_episode_stats(stats: &EpisodeStats, mode: PiBMode) -> (StochasticPolicy, usize) {
    let first = &stats.per_time[0];
    let (ns, na) = (first.n_states(), first.n_actions());
    match mode {
        PiBMode::PerTime => {
            let mut unseen = 0;
            let tables = stats
                .per_time
                .iter()
                .map(|x| {
                    let (table, u) = pi_b_table(&[x]);
                    unseen += u;
                    table
                })
                .collect();
            (StochasticPolicy::from_tables_unchecked(ns, na, tables), unseen)
        }
        PiBMode::Pooled => {
            let refs: Vec<&SampleStats> = stats.per_time.iter().collect();
            let (table, unseen) = pi_b_table(&refs);
            (StochasticPolicy::from_tables_unchecked(ns, na, vec![table]), unseen)
        }
    }
}

pub fn pi_b_from_stats(stats: &SampleStats) -> (StochasticPolicy, usize) {
    let (table, unseen) = pi_b_table(&[stats]);
    (
        StochasticPolicy::from_tables_unchecked(stats.n_states(), stats.n_actions(), vec![table]),
        unseen,
    )
}

/// Empirical behavior policy: per-time for trajectories, stationary for
/// transitions.
pub fn estimate_pi_b(n_states: usize, n_actions: usize, data: &Dataset) -> Result<(StochasticPolicy, usize)> {
    match data.as_trajectories() {
        Ok(_) => {
            let stats = EpisodeStats::from_dataset(n_states, n_actions, data)?;
            Ok(pi_b_from_episode_stats(&stats, PiBMode::PerTime))
        }
        Err(_) => Ok(pi_b_from_stats(&transition_stats(n_states, n_actions, data)?)),
    }
}

/// Backward tabular regression of `r_t + v̂_{t+1}(s_{t+1})` on `(s_t, a_t)`
/// with `v̂_{t+1} = Σ_a π̂^e q̂_{t+1}` and `q̂_{H+1} ≡ 0`. Returns the q-tables
/// and the number of unvisited cells (set to zero).
pub fn fitted_q_iteration(stats: &EpisodeStats, pi_e: &StochasticPolicy) -> (Vec<QTable>, usize) {
    let horizon = stats.horizon();
    let (ns, na) = (pi_e.n_states(), pi_e.n_actions());
    let mut q = vec![QTable::zeros(ns, na); horizon];
    let mut v_next = vec![0.0; ns];
    let mut unvisited = 0;
    for t in (0..horizon).rev() {
        let st = &stats.per_time[t];
        for s in 0..ns {
            for a in 0..na {
                let i = st.cell(s, a);
                if st.count[i] > 0.0 {
                    let future: f64 = st.next[i].iter().map(|&(j, _, w)| w * v_next[j]).sum();
                    q[t].set(s, a, (st.reward_sum[i] + future) / st.count[i]);
                } else {
                    unvisited += 1;
                }
            }
        }
        v_next = policy_average(pi_e, t, &q[t]);
    }
    (q, unvisited)
}

fn ratio_or_zero(num: f64, den: f64, zeroed: &mut usize) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        if num > 0.0 {
            *zeroed += 1;
        }
        0.0
    }
}

/// Histogram estimator: propagate `π̂^e` through the empirical kernel and
/// divide by the empirical behavior marginals. `ŵ_1 ≡ 1`.
pub fn estimate_w_model_based(stats: &EpisodeStats, pi_e: &StochasticPolicy) -> (Vec<Vec<f64>>, usize) {
    let horizon = stats.horizon();
    let (ns, na) = (pi_e.n_states(), pi_e.n_actions());
    let mut zeroed = 0;
    let first = &stats.per_time[0];
    let mut p_e: Vec<f64> = (0..ns).map(|s| first.state_count(s) / first.total).collect();
    let mut w = vec![vec![1.0; ns]];
    for t in 0..horizon.saturating_sub(1) {
        let st = &stats.per_time[t];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if p_e[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let i = st.cell(s, a);
                let mass = p_e[s] * pi_e.prob(t, s, a);
                if mass == 0.0 {
                    continue;
                }
                if st.count[i] == 0.0 {
                    // π̂^e puts mass on an action never taken here; it is lost.
                    zeroed += 1;
                    continue;
                }
                for (j, c) in st.next_states(s, a) {
                    next[j] += mass * c / st.count[i];
                }
            }
        }
        let nt = &stats.per_time[t + 1];
        w.push((0..ns).map(|s| ratio_or_zero(next[s], nt.state_count(s) / nt.total, &mut zeroed)).collect());
        p_e = next;
    }
    (w, zeroed)
}

/// Recursive regression `ŵ_{t+1}(s') = E_n[η̂_t ŵ_t | s_{t+1} = s']`, `ŵ_1 ≡ 1`.
pub fn estimate_w_regression(stats: &EpisodeStats, eta: impl Fn(usize) -> QTable) -> (Vec<Vec<f64>>, usize) {
    let horizon = stats.horizon();
    let first = &stats.per_time[0];
    let (ns, na) = (first.n_states(), first.n_actions());
    let mut zeroed = 0;
    let mut w = vec![vec![1.0; ns]];
    for t in 0..horizon.saturating_sub(1) {
        let st = &stats.per_time[t];
        let eta_t = eta(t);
        let mut num = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let factor = eta_t.get(s, a) * w[t][s];
                for &(j, _, c) in &st.next[st.cell(s, a)] {
                    num[j] += c * factor;
                }
            }
        }
        let den = st.next_state_counts();
        w.push((0..ns).map(|s| ratio_or_zero(num[s], den[s], &mut zeroed)).collect());
    }
    (w, zeroed)
}

/// Direct regression `ŵ_t(s) = E_n[λ̂_{t-1} | s_t = s]` on raw trajectories.
pub fn estimate_w_lambda(trajs: &[Trajectory], n_states: usize, eta: &[QTable]) -> (Vec<Vec<f64>>, usize) {
    let horizon = trajs[0].horizon();
    let mut num = vec![vec![0.0; n_states]; horizon];
    let mut den = vec![vec![0.0; n_states]; horizon];
    for traj in trajs {
        let lambda = cumulative_ratios(traj, eta);
        for t in 0..horizon {
            let s = traj.steps[t].s;
            num[t][s] += if t == 0 { 1.0 } else { lambda[t - 1] };
            den[t][s] += 1.0;
        }
    }
    let mut zeroed = 0;
    let mut w: Vec<Vec<f64>> = (0..horizon)
        .map(|t| (0..n_states).map(|s| ratio_or_zero(num[t][s], den[t][s], &mut zeroed)).collect())
        .collect();
    w[0] = vec![1.0; n_states];
    (w, zeroed)
}

/// Solves `A x = b` densely for small systems and by the fixed point
/// `x = b + M x` otherwise. `dense` builds `A`; `apply` writes `M x`.
fn solve_moment_system(
    b: &[f64],
    dense: impl FnOnce() -> DMatrix<f64>,
    apply: impl FnMut(&[f64], &mut [f64]),
    diag: &mut Diagnostics,
) -> Result<Vec<f64>> {
    if b.len() <= DENSE_LIMIT {
        let (x, condition) = solve_dense(dense(), b)?;
        diag.max_condition = diag.max_condition.max(condition);
        Ok(x)
    } else {
        diag.iterative_solves += 1;
        fixed_point(b, apply)
    }
}

/// Indicator-test-function version of the stationary ratio moment equation
///
/// `0 = (1-γ) E_{p_e^(1)}[f(s)] + E_n[γ w(s) η̂(s, a) f(s') - w(s) f(s)]`,
///
/// one equation per visited state. Unvisited states get `ŵ* = 0`.
pub fn estimate_w_star(
    stats: &SampleStats,
    eta: &QTable,
    gamma: f64,
    p_e1: &[f64],
) -> Result<(Vec<f64>, Diagnostics)> {
    let (ns, na) = (stats.n_states(), stats.n_actions());
    if p_e1.len() != ns {
        return Err(OpeError::Dimension("p_e1 length".into()));
    }
    let mut diag = Diagnostics::default();
    let n_s: Vec<f64> = (0..ns).map(|s| stats.state_count(s)).collect();
    let visited: Vec<usize> = (0..ns).filter(|&s| n_s[s] > 0.0).collect();
    diag.unseen_states = ns - visited.len();
    let mut index = vec![usize::MAX; ns];
    for (k, &s) in visited.iter().enumerate() {
        index[s] = k;
    }
    // M[i][j] = Σ_a η̂(j, a) count(j, a, s' = i), stored by column j.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); visited.len()];
    for (kj, &j) in visited.iter().enumerate() {
        for a in 0..na {
            let e = eta.get(j, a);
            if e == 0.0 {
                continue;
            }
            for (i, c) in stats.next_states(j, a) {
                if index[i] != usize::MAX {
                    cols[kj].push((index[i], gamma * e * c));
                }
            }
        }
    }
    let b: Vec<f64> = visited.iter().map(|&i| stats.total * (1.0 - gamma) * p_e1[i]).collect();
    let m = visited.len();
    // Unknowns y = n_s w; the system reads y = b + M diag(1/n_s) y.
    let y = solve_moment_system(
        &b,
        || {
            let mut a = DMatrix::identity(m, m);
            for (kj, col) in cols.iter().enumerate() {
                for &(ki, c) in col {
                    a[(ki, kj)] -= c / n_s[visited[kj]];
                }
            }
            a
        },
        |x, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (kj, col) in cols.iter().enumerate() {
                let xj = x[kj] / n_s[visited[kj]];
                for &(ki, c) in col {
                    out[ki] += c * xj;
                }
            }
        },
        &mut diag,
    )?;
    let mut w = vec![0.0; ns];
    for (k, &s) in visited.iter().enumerate() {
        w[s] = y[k] / n_s[s];
    }
    Ok((w, diag))
}

/// Indicator-test-function version of the stationary q moment equation.
///
/// Tilting: `0 = E_n[1{s=i,a=j}(r + γ v̂(s') - q(s, a))]` with `v̂ = Σ π̂^e q`.
/// Modified treatment: `0 = E_n[1{s=i,a=j}(r + γ q(s', τ(s', a')) - q(s, a))]`.
/// Unvisited cells get `q̂ = 0`.
pub fn estimate_q_stationary(
    stats: &SampleStats,
    pi_e: &StochasticPolicy,
    spec: &NaturalPolicySpec,
    gamma: f64,
) -> Result<(QTable, Diagnostics)> {
    let (ns, na) = (stats.n_states(), stats.n_actions());
    let mut diag = Diagnostics::default();
    let cells: Vec<usize> = (0..ns * na).filter(|&i| stats.count[i] > 0.0).collect();
    diag.unvisited_cells = ns * na - cells.len();
    let mut index = vec![usize::MAX; ns * na];
    for (k, &i) in cells.iter().enumerate() {
        index[i] = k;
    }
    // Row k: q_k = r̄_k + Σ_l M[k][l] q_l.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cells.len());
    for &i in &cells {
        let inv_n = 1.0 / stats.count[i];
        let mut row: Vec<(usize, f64)> = Vec::new();
        for &(s2, a2, c) in &stats.next[i] {
            if spec.is_tilting() {
                for a in 0..na {
                    let k = index[s2 * na + a];
                    let p = pi_e.prob(0, s2, a);
                    if k != usize::MAX && p > 0.0 {
                        row.push((k, gamma * c * inv_n * p));
                    }
                }
            } else {
                let k = index[s2 * na + spec.tau(0, s2, a2)];
                if k != usize::MAX {
                    row.push((k, gamma * c * inv_n));
                }
            }
        }
        row.sort_unstable_by_key(|x| x.0);
        row.dedup_by(|x, y| {
            if x.0 == y.0 {
                y.1 += x.1;
                true
            } else {
                false
            }
        });
        rows.push(row);
    }
    let b: Vec<f64> = cells.iter().map(|&i| stats.reward_sum[i] / stats.count[i]).collect();
    let m = cells.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, row) in rows.iter().enumerate() {
            out[k] = row.iter().map(|&(l, c)| c * x[l]).sum();
        }
    };
    let x = solve_moment_system(
        &b,
        || {
            let mut a = DMatrix::identity(m, m);
            for (k, row) in rows.iter().enumerate() {
                for &(l, c) in row {
                    a[(k, l)] -= c;
                }
            }
            a
        },
        apply,
        &mut diag,
    )?;
    let mut mx = vec![0.0; m];
    apply(&x, &mut mx);
    let residual = (0..m).map(|k| (b[k] + mx[k] - x[k]).abs()).fold(0.0, f64::max);
    let scale = x.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if residual > MOMENT_TOL * scale {
        return Err(OpeError::NotConverged { iterations: 0, residual });
    }
    let mut q = QTable::zeros(ns, na);
    for (k, &i) in cells.iter().enumerate() {
        q.values_mut()[i] = x[k];
    }
    Ok((q, diag))
}

/// Direct v-function estimate for a known ratio `η`:
/// `0 = E_n[1{s=i}(η(s, a)(r + γ v(s')) - v(s))]`. Unvisited states get 0.
pub fn estimate_v_direct(stats: &SampleStats, eta: &QTable, gamma: f64) -> Result<(Vec<f64>, Diagnostics)> {
    let (ns, na) = (stats.n_states(), stats.n_actions());
    let mut diag = Diagnostics::default();
    let n_s: Vec<f64> = (0..ns).map(|s| stats.state_count(s)).collect();
    let visited: Vec<usize> = (0..ns).filter(|&s| n_s[s] > 0.0).collect();
    diag.unseen_states = ns - visited.len();
    let mut index = vec![usize::MAX; ns];
    for (k, &s) in visited.iter().enumerate() {
        index[s] = k;
    }
    let mut rows = Vec::with_capacity(visited.len());
    let mut b = Vec::with_capacity(visited.len());
    for &s in &visited {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut rhs = 0.0;
        for a in 0..na {
            let e = eta.get(s, a);
            let i = stats.cell(s, a);
            rhs += e * stats.reward_sum[i] / n_s[s];
            for (j, c) in stats.next_states(s, a) {
                if index[j] != usize::MAX {
                    row.push((index[j], gamma * e * c / n_s[s]));
                }
            }
        }
        rows.push(row);
        b.push(rhs);
    }
    let m = visited.len();
    let x = solve_moment_system(
        &b,
        || {
            let mut a = DMatrix::identity(m, m);
            for (k, row) in rows.iter().enumerate() {
                for &(l, c) in row {
                    a[(k, l)] -= c;
                }
            }
            a
        },
        |x, out| {
            for (k, row) in rows.iter().enumerate() {
                out[k] = row.iter().map(|&(l, c)| c * x[l]).sum();
            }
        },
        &mut diag,
    )?;
    let mut v = vec![0.0; ns];
    for (k, &s) in visited.iter().enumerate() {
        v[s] = x[k];
    }
    Ok((v, diag))
}

/// Estimator used for the finite-horizon state ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMethod {
    /// Histogram / empirical-kernel propagation.
    #[default]
    ModelBased,
    /// Recursive regression of `η̂_{t-1} ŵ_{t-1}` on `s_t`.
    Regression,
    /// Regression of the cumulative ratio `λ̂_{t-1}` on `s_t`.
    Lambda,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteTrainOptions {
    pub w_method: WMethod,
    pub pi_b_mode: PiBMode,
}

/// Fits `(π̂^b, q̂, ŵ)` on finite-horizon trajectories.
pub fn train_finite(
    n_states: usize,
    n_actions: usize,
    data: &Dataset,
    spec: &NaturalPolicySpec,
    options: FiniteTrainOptions,
) -> Result<NuisanceSet> {
    let trajs = data.as_trajectories()?;
    let stats = EpisodeStats::from_trajectories(n_states, n_actions, trajs)?;
    train_finite_from_stats(&stats, spec, options, Some(trajs))
}

/// As [`train_finite`], from precomputed (possibly population) statistics.
/// The `Lambda` method needs the raw trajectories.
pub fn train_finite_from_stats(
    stats: &EpisodeStats,
    spec: &NaturalPolicySpec,
    options: FiniteTrainOptions,
    trajs: Option<&[Trajectory]>,
) -> Result<NuisanceSet> {
    let (pi_b, unseen) = pi_b_from_episode_stats(stats, options.pi_b_mode);
    let pi_e = spec.evaluation_policy(&pi_b)?;
    let (q, unvisited) = fitted_q_iteration(stats, &pi_e);
    let skeleton = NuisanceSet::finite(spec.clone(), pi_b, q, vec![vec![1.0; pi_e.n_states()]; stats.horizon()])?;
    let (w, zeroed) = match options.w_method {
        WMethod::ModelBased => estimate_w_model_based(stats, &pi_e),
        WMethod::Regression => estimate_w_regression(stats, |t| skeleton.eta(t).clone()),
        WMethod::Lambda => {
            let trajs = trajs.ok_or_else(|| {
                OpeError::config("w_method", "the lambda method needs raw trajectories")
            })?;
            let eta: Vec<QTable> = (0..stats.horizon()).map(|t| skeleton.eta(t).clone()).collect();
            estimate_w_lambda(trajs, pi_e.n_states(), &eta)
        }
    };
    let mut out = skeleton.with_w(w)?;
    out.diagnostics.unseen_states += unseen;
    out.diagnostics.unvisited_cells += unvisited;
    out.diagnostics.zeroed_ratios += zeroed;
    Ok(out)
}

/// Fits `(π̂^b, q̂, ŵ*)` on stationary transitions.
pub fn train_stationary(
    n_states: usize,
    n_actions: usize,
    data: &Dataset,
    spec: &NaturalPolicySpec,
    gamma: f64,
    p_e1: &[f64],
) -> Result<NuisanceSet> {
    train_stationary_from_stats(&transition_stats(n_states, n_actions, data)?, spec, gamma, p_e1)
}

pub fn train_stationary_from_stats(
    stats: &SampleStats,
    spec: &NaturalPolicySpec,
    gamma: f64,
    p_e1: &[f64],
) -> Result<NuisanceSet> {
    let (pi_b, unseen) = pi_b_from_stats(stats);
    let pi_e = spec.evaluation_policy(&pi_b)?;
    let (q, q_diag) = estimate_q_stationary(stats, &pi_e, spec, gamma)?;
    let skeleton = NuisanceSet::stationary(spec.clone(), pi_b, q, vec![0.0; stats.n_states()])?;
    let (w_star, w_diag) = estimate_w_star(stats, skeleton.eta(0), gamma, p_e1)?;
    let mut out = skeleton.with_w(vec![w_star])?;
    out.diagnostics.unseen_states = unseen;
    out.diagnostics.unvisited_cells += q_diag.unvisited_cells;
    out.diagnostics.max_condition = q_diag.max_condition.max(w_diag.max_condition);
    out.diagnostics.iterative_solves = q_diag.iterative_solves + w_diag.iterative_solves;
    Ok(out)
}
