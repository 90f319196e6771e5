//! Dense and iterative solvers for the tabular linear systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{OpeError, Result};

/// Systems with at most this many unknowns are solved by dense LU.
pub const DENSE_LIMIT: usize = 1_000;

/// Relative tolerance of the iterative fallback.
pub const ITERATIVE_TOL: f64 = 1e-12;

const MAX_ITERATIONS: usize = 200_000;

/// Solves `A x = b` by LU with partial pivoting, followed by one step of
/// iterative refinement. Returns the solution and a crude condition estimate
/// (ratio of largest to smallest pivot magnitude).
pub fn solve_dense(a: DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = a.nrows();
    let rhs = DVector::from_column_slice(b);
    let lu = a.clone().lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max_pivot = pivots.iter().copied().fold(0.0, f64::max);
    let min_pivot = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min_pivot > 0.0 { max_pivot / min_pivot } else { f64::INFINITY };
    if !(min_pivot > max_pivot * 1e-13) {
        return Err(OpeError::Singular { condition });
    }
    let mut x = lu.solve(&rhs).ok_or(OpeError::Singular { condition })?;
    let residual = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    Ok((x.as_slice().to_vec(), condition))
}

/// Iterates `x <- b + M x` until the update is below `ITERATIVE_TOL`
/// relative to `max|x|`. `apply` writes `M x` into its second argument.
pub fn fixed_point<F>(b: &[f64], mut apply: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = b.to_vec();
    let mut mx = vec![0.0; n];
    for _ in 0..MAX_ITERATIONS {
        apply(&x, &mut mx);
        let mut delta: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            let next = b[i] + mx[i];
            delta = delta.max((next - x[i]).abs());
            scale = scale.max(next.abs());
            x[i] = next;
        }
        if !delta.is_finite() {
            return Err(OpeError::NotConverged { iterations: 0, residual: delta });
        }
        if delta <= ITERATIVE_TOL * scale.max(1.0) {
            return Ok(x);
        }
    }
    apply(&x, &mut mx);
    let residual = (0..n).map(|i| (b[i] + mx[i] - x[i]).abs()).fold(0.0, f64::max);
    Err(OpeError::NotConverged { iterations: MAX_ITERATIONS, residual })
}
