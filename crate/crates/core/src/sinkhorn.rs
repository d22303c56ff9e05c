//! Sinkhorn–Knopp balancing of non-negative square matrices and permutation
//! decoding of the resulting soft assignments.

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{GcmError, Result};

/// Entries below this are treated as this value whenever logs are taken.
pub const LOG_FLOOR: f64 = 1e-300;

/// Cost given to structural zeros when decoding; far above `-ln(LOG_FLOOR)`.
const STRUCTURAL_COST: f64 = 1e6;

/// An `N × N` non-negative matrix over (observed-or-dummy rows) × slot columns.
/// Rows `n_observed..N` are dummy rows standing in for unobserved parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRecord", into = "MatrixRecord")]
pub struct AssignmentMatrix {
    n: usize,
    n_observed: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    n_observed: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRecord> for AssignmentMatrix {
    type Error = GcmError;

    fn try_from(r: MatrixRecord) -> Result<Self> {
        AssignmentMatrix::from_rows(&r.rows, r.n_observed)
    }
}

impl From<AssignmentMatrix> for MatrixRecord {
    fn from(m: AssignmentMatrix) -> Self {
        MatrixRecord {
            n_observed: m.n_observed,
            rows: m.to_rows(),
        }
    }
}

impl AssignmentMatrix {
    pub fn new(n: usize, n_observed: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(GcmError::DimensionMismatch(format!(
                "assignment matrix needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        if n_observed > n {
            return Err(GcmError::TooManyPoints {
                points: n_observed,
                slots: n,
            });
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(GcmError::DimensionMismatch(format!(
                "assignment entries must be finite and non-negative (got {v})"
            )));
        }
        Ok(AssignmentMatrix { n, n_observed, data })
    }

    pub fn zeros(n: usize, n_observed: usize) -> Self {
        AssignmentMatrix {
            n,
            n_observed,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = AssignmentMatrix::zeros(n, n);
        (0..n).for_each(|i| m.data[i * n + i] = 1.0);
        m
    }

    pub fn from_rows(rows: &[Vec<f64>], n_observed: usize) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GcmError::DimensionMismatch("assignment matrix must be square".into()));
        }
        AssignmentMatrix::new(n, n_observed, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_observed(&self) -> usize {
        self.n_observed
    }

    pub fn is_dummy(&self, row: usize) -> bool {
        row >= self.n_observed
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for row in self.data.chunks(self.n.max(1)) {
            sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        sums
    }

    /// `max(max_i |row_i − 1|, max_j |col_j − 1|)`.
    pub fn residual(&self) -> f64 {
        stochastic_residual(&self.data, self.n)
    }
}

fn stochastic_residual(data: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut cols = vec![0.0; n];
    for row in data.chunks(n.max(1)) {
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        cols.iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    cols.iter().fold(worst, |w, c| w.max((c - 1.0).abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornResult {
    pub matrix: AssignmentMatrix,
    pub iterations: usize,
    pub residual: f64,
}

fn check_support(data: &[f64], n: usize) -> Result<()> {
    for i in 0..n {
        if !data[i * n..(i + 1) * n].iter().any(|&v| v > 0.0) {
            return Err(GcmError::StructurallyInfeasible { index: i });
        }
    }
    for j in 0..n {
        if !(0..n).any(|i| data[i * n + j] > 0.0) {
            return Err(GcmError::StructurallyInfeasible { index: j });
        }
    }
    Ok(())
}

/// Alternating row/column normalization, in place. Returns
/// `(iterations, residual)`; stops as soon as the residual drops below `tol`.
fn balance_linear(data: &mut [f64], n: usize, tol: f64, max_iter: usize) -> (usize, f64) {
    let mut cols = vec![0.0; n];
    for it in 0..=max_iter {
        let residual = stochastic_residual(data, n);
        if residual < tol || it == max_iter {
            return (it, residual);
        }
        for row in data.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        cols.iter_mut().for_each(|c| *c = 0.0);
        for row in data.chunks(n) {
            cols.iter_mut().zip(row).for_each(|(c, v)| *c += v);
        }
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&cols).for_each(|(v, c)| *v /= c);
        }
    }
    unreachable!()
}

/// Scales a non-negative matrix to doubly stochastic form.
///
/// The zero pattern of the input is preserved. An all-zero row or column is
/// structurally infeasible; failing to reach `tol` within `max_iter` sweeps is
/// reported as non-convergence together with the final residual.
pub fn sinkhorn_knopp(m: &AssignmentMatrix, tol: f64, max_iter: usize) -> Result<SinkhornResult> {
    let n = m.n;
    check_support(&m.data, n)?;
    let mut data = m.data.clone();
    let (iterations, residual) = balance_linear(&mut data, n, tol, max_iter);
    if residual >= tol {
        return Err(GcmError::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(SinkhornResult {
        matrix: AssignmentMatrix {
            n,
            n_observed: m.n_observed,
            data,
        },
        iterations,
        residual,
    })
}

/// Sinkhorn balancing of `exp(log_rho)`, written back into `log_rho` as
/// probabilities. Entries equal to `-∞` are structural zeros and stay exactly
/// zero; all other entries are kept at or above [`LOG_FLOOR`]. Does not fail
/// on slow convergence: the achieved residual is returned instead.
pub fn sinkhorn_log_in_place(
    log_rho: &mut [f64],
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    // One log-domain row and column pass brings everything into range.
    for (i, row) in log_rho.chunks_mut(n).enumerate() {
        let lse = log_sum_exp(row);
        if lse == f64::NEG_INFINITY {
            return Err(GcmError::StructurallyInfeasible { index: i });
        }
        row.iter_mut().for_each(|v| *v -= lse);
    }
    for j in 0..n {
        let lse = log_sum_exp_iter((0..n).map(|i| log_rho[i * n + j]));
        if lse == f64::NEG_INFINITY {
            return Err(GcmError::StructurallyInfeasible { index: j });
        }
        (0..n).for_each(|i| log_rho[i * n + j] -= lse);
    }
    for v in log_rho.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            v.exp().max(LOG_FLOOR)
        };
    }
    let (it, residual) = balance_linear(log_rho, n, tol, max_iter.saturating_sub(1));
    Ok((it + 1, residual))
}

/// Normalizes each row of `exp(log_rho)` to sum to one, in place.
pub fn row_normalize_log_in_place(log_rho: &mut [f64], n: usize) -> Result<()> {
    for (i, row) in log_rho.chunks_mut(n).enumerate() {
        let lse = log_sum_exp(row);
        if lse == f64::NEG_INFINITY {
            return Err(GcmError::StructurallyInfeasible { index: i });
        }
        row.iter_mut().for_each(|v| {
            *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - lse).exp() }
        });
    }
    Ok(())
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    log_sum_exp_iter(v.iter().copied())
}

fn log_sum_exp_iter(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Assignment `row → column` maximizing `Σ log r` over the chosen entries.
/// Exact ties resolve to the lexicographically smallest column sequence.
pub fn decode_permutation(r: &AssignmentMatrix) -> Vec<usize> {
    let cost: Vec<f64> = r
        .data
        .iter()
        .map(|&v| if v > 0.0 { -v.max(LOG_FLOOR).ln() } else { STRUCTURAL_COST })
        .collect();
    assignment::solve_lexicographic(&cost, r.n, 1e-9).0
}
