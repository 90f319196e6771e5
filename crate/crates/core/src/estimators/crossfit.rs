use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::simulate::rng_from_seed;
use crate::nuisance::Diagnostics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Uniformly random assignment; for i.i.d. records.
    Random,
    /// Consecutive blocks; for transitions cut from a single trajectory.
    Contiguous,
}

/// A `K`-fold partition of `0..n` with fold sizes within one of `n / K`.
/// The degenerate `K = 1` partition ([`FoldPartition::no_split`]) trains and
/// scores on the same records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPartition {
    pub fn new(n: usize, k: usize, scheme: FoldScheme, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(OpeError::InvalidFolds { k, n });
        }
        if k == 1 {
            return Self::no_split(n);
        }
        // The first n % k folds take one extra record.
        let sizes: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
        let mut ordered = Vec::with_capacity(n);
        for (f, &size) in sizes.iter().enumerate() {
            ordered.extend(std::iter::repeat_n(f, size));
        }
        let assignment = match scheme {
            FoldScheme::Contiguous => ordered,
            FoldScheme::Random => {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng_from_seed(seed));
                let mut assignment = vec![0; n];
                for (pos, &i) in perm.iter().enumerate() {
                    assignment[i] = ordered[pos];
                }
                assignment
            }
        };
        Ok(FoldPartition { k, assignment })
    }

    /// One fold holding every record; nuisances are fitted in-sample.
    pub fn no_split(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(OpeError::EmptyDataset);
        }
        Ok(FoldPartition { k: 1, assignment: vec![0; n] })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Indices in fold `f` (the evaluation set `U_f`).
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == f).collect()
    }

    /// Indices outside fold `f` (the training set `L_f`).
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != f).collect()
    }

    /// Training set of fold `f`: its complement, or everything when `K = 1`.
    pub fn training(&self, f: usize) -> Vec<usize> {
        if self.k == 1 {
            (0..self.len()).collect()
        } else {
            self.complement(f)
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Nuisances fitted for one fold, plus an additive constant of the
/// per-record score (e.g. the initial-state term of the discounted estimators).
#[derive(Debug, Clone)]
pub struct FoldFit<N> {
    pub nuisances: N,
    pub constant: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    pub fold: usize,
    pub size: usize,
    pub estimate: f64,
}

/// Result of an estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub estimate: f64,
    pub per_fold: Vec<FoldEstimate>,
    /// Sample SD of the per-record scores over `√n`; absent for plug-in
    /// estimators without a per-record score.
    pub se: Option<f64>,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: Option<u64>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// Builds a report from per-record scores grouped by fold.
    pub fn from_scores(
        estimator: &str,
        scores: &[f64],
        assignment: &[usize],
        k: usize,
        seed: Option<u64>,
        diagnostics: Diagnostics,
    ) -> Self {
        let n = scores.len();
        let mut sums = vec![0.0; k];
        let mut sizes = vec![0; k];
        for (&x, &f) in scores.iter().zip(assignment) {
            sums[f] += x;
            sizes[f] += 1;
        }
        let per_fold: Vec<FoldEstimate> = (0..k)
            .map(|f| FoldEstimate { fold: f, size: sizes[f], estimate: sums[f] / sizes[f] as f64 })
            .collect();
        let estimate = per_fold.iter().map(|x| x.size as f64 * x.estimate).sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = scores.iter().map(|x| (x - estimate).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        EstimateReport { estimator: estimator.to_string(), estimate, per_fold, se, n, k, seed, diagnostics }
    }

    pub const CSV_HEADER: [&'static str; 7] = ["estimator", "n", "estimate", "se", "K", "seed", "diagnostics"];

    pub fn csv_record(&self) -> [String; 7] {
        let d = &self.diagnostics;
        [
            self.estimator.clone(),
            self.n.to_string(),
            format!("{:.12e}", self.estimate),
            self.se.map_or(String::new(), |x| format!("{x:.12e}")),
            self.k.to_string(),
            self.seed.map_or(String::new(), |x| x.to_string()),
            format!(
                "unseen_states={};unvisited_cells={};zeroed_ratios={};max_condition={:.3e};iterative_solves={}",
                d.unseen_states, d.unvisited_cells, d.zeroed_ratios, d.max_condition, d.iterative_solves
            ),
        ]
    }
}

/// Writes one CSV row per report.
pub fn write_reports_csv<W: Write>(reports: &[EstimateReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io = |e: csv::Error| OpeError::Io(std::io::Error::other(e));
    writer.write_record(EstimateReport::CSV_HEADER).map_err(io)?;
    for r in reports {
        writer.write_record(r.csv_record()).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Generic cross-fitting: for each fold `k`, fit nuisances on the complement
/// `L_k` and score the records of `U_k`. Folds run in parallel; results are
/// combined in fold order, so the output is deterministic.
pub fn crossfit<N, T, P>(
    estimator: &str,
    partition: &FoldPartition,
    seed: Option<u64>,
    train: T,
    phi: P,
) -> Result<EstimateReport>
where
    N: Send + Sync,
    T: Fn(usize, &[usize]) -> Result<FoldFit<N>> + Sync,
    P: Fn(usize, &N) -> f64 + Sync,
{
    let k = partition.k();
    let folds: Vec<(Vec<usize>, Vec<f64>, Diagnostics)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let fit = train(f, &partition.training(f))?;
            let idx = partition.fold(f);
            let scores = idx.iter().map(|&i| phi(i, &fit.nuisances) + fit.constant).collect();
            Ok((idx, scores, fit.diagnostics))
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; partition.len()];
    let mut diagnostics = Diagnostics::default();
    for (idx, fold_scores, diag) in &folds {
        for (&i, &x) in idx.iter().zip(fold_scores) {
            scores[i] = x;
        }
        diagnostics.merge(diag);
    }
    Ok(EstimateReport::from_scores(estimator, &scores, partition.assignment(), k, seed, diagnostics))
}
