//! Principal component pursuit and its column-sparse extension.
//!
//! `pcp_decompose` solves `min ‖L‖* + λ‖S‖₁ s.t. L + S = M` and
//! `pcp_outlier_decompose` adds a column-sparse block penalized by `γ‖C‖₁,₂`.
//! Both run an augmented-Lagrangian iteration whose penalty starts at
//! `N₁N₂ / (4‖D‖₁)` and adapts by residual balancing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::l1_solvers::SolverConfig;
use crate::mat_core::{norm_of, soft, svt, DenseMatrix, NormKind};

/// Singular values and entries below this fraction of the largest are reported as zero.
pub const REPORT_TOL: f64 = 1e-6;

/// Stopping threshold on `‖D − ΣParts‖_F / ‖D‖_F`. The dual residual must
/// also fall below `rel_tol · ‖D‖_F`.
pub const CONSTRAINT_TOL: f64 = 1e-7;

/// Iterations between penalty adaptations.
const MU_PERIOD: usize = 10;

#[derive(Clone, Debug)]
pub struct PcpResult {
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    /// Zero for plain PCP.
    pub column_part: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub constraint_residual: f64,
}

impl PcpResult {
    /// Number of singular values of `low_rank` above `REPORT_TOL · σ₁`.
    pub fn reported_rank(&self) -> usize {
        crate::mat_core::numerical_rank(self.low_rank.as_matrix(), REPORT_TOL)
    }

    /// Entries of `sparse` above `REPORT_TOL` times its largest magnitude.
    pub fn reported_nnz(&self) -> usize {
        let s = self.sparse.as_matrix();
        let cut = REPORT_TOL * s.amax();
        s.iter().filter(|x| x.abs() > cut && **x != 0.0).count()
    }

    /// Columns of `column_part` whose norm exceeds `REPORT_TOL` times the largest.
    pub fn reported_columns(&self) -> Vec<usize> {
        let c = self.column_part.as_matrix();
        let norms: Vec<f64> = c.column_iter().map(|col| col.norm()).collect();
        let top = norms.iter().copied().fold(0.0, f64::max);
        norms.iter().enumerate().filter(|&(_, &n)| n > REPORT_TOL * top && n > 0.0).map(|(j, _)| j).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    /// `1/√max(N₁, N₂)`.
    Auto,
    #[serde(untagged)]
    Value(f64),
}

impl Lambda {
    pub fn resolve(self, rows: usize, cols: usize) -> f64 {
        match self {
            Lambda::Auto => 1.0 / (rows.max(cols) as f64).sqrt(),
            Lambda::Value(v) => v,
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        s.parse::<f64>().map(Lambda::Value).map_err(|e| format!("expected a number or 'auto': {e}"))
    }
}

/// `1/√N₁`, the weight used inside the detection pipelines.
pub fn row_lambda(rows: usize) -> f64 {
    1.0 / (rows as f64).sqrt()
}

/// `3 / (√N₁ · ln N₂)`.
pub fn default_gamma(rows: usize, cols: usize) -> f64 {
    3.0 / ((rows as f64).sqrt() * (cols.max(2) as f64).ln())
}

pub fn pcp_decompose(m: &DenseMatrix, lambda: f64, cfg: &SolverConfig) -> Result<PcpResult> {
    run(m, lambda, None, cfg)
}

pub fn pcp_outlier_decompose(d: &DenseMatrix, lambda: f64, gamma: f64, cfg: &SolverConfig) -> Result<PcpResult> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    run(d, lambda, Some(gamma), cfg)
}

/// Objective of the convex program at the given parts.
pub fn pcp_objective(l: &DMatrix<f64>, s: &DMatrix<f64>, c: Option<&DMatrix<f64>>, lambda: f64, gamma: f64) -> f64 {
    let base = norm_of(l, NormKind::Nuclear) + lambda * norm_of(s, NormKind::L1);
    match c {
        Some(c) => base + gamma * norm_of(c, NormKind::L12),
        None => base,
    }
}

fn column_shrink(a: &mut DMatrix<f64>, tau: f64) {
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        let f = if n > tau { 1.0 - tau / n } else { 0.0 };
        col.scale_mut(f);
    }
}

fn run(input: &DenseMatrix, lambda: f64, gamma: Option<f64>, cfg: &SolverConfig) -> Result<PcpResult> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    let d = input.as_matrix();
    let (n1, n2) = d.shape();
    let d_fro = d.norm();
    let zero = || DMatrix::<f64>::zeros(n1, n2);
    if d_fro == 0.0 {
        return Ok(PcpResult {
            low_rank: DenseMatrix::zeros(n1, n2),
            sparse: DenseMatrix::zeros(n1, n2),
            column_part: DenseMatrix::zeros(n1, n2),
            iterations: 0,
            converged: true,
            constraint_residual: 0.0,
        });
    }
    let mut mu = (n1 * n2) as f64 / (4.0 * norm_of(d, NormKind::L1));
    let mut l = zero();
    let mut s = zero();
    let mut c = zero();
    let mut y = zero();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let inv = 1.0 / mu;
        let (l_new, _) = svt(&(d - &s - &c + &y * inv), inv);
        l = l_new;
        let s_old = s.clone();
        s = d - &l - &c + &y * inv;
        let tau = lambda * inv;
        s.apply(|v| *v = soft(*v, tau));
        let mut dual_change = &s - &s_old;
        if let Some(g) = gamma {
            let c_old = c.clone();
            c = d - &l - &s + &y * inv;
            column_shrink(&mut c, g * inv);
            dual_change += &c - &c_old;
        }
        let r = d - &l - &s - &c;
        y += &r * mu;
        let primal = r.norm();
        residual = primal / d_fro;
        let dual = mu * dual_change.norm();
        if residual < CONSTRAINT_TOL && dual <= cfg.rel_tol * d_fro {
            converged = true;
            break;
        }
        if k % MU_PERIOD == 0 {
            if primal > 10.0 * dual {
                mu *= 2.0;
            } else if dual > 10.0 * primal {
                mu /= 2.0;
            }
        }
    }
    Ok(PcpResult {
        low_rank: DenseMatrix::from_matrix(l)?,
        sparse: DenseMatrix::from_matrix(s)?,
        column_part: DenseMatrix::from_matrix(c)?,
        iterations,
        converged,
        constraint_residual: residual,
    })
}
