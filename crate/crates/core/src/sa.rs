//! Sparse-approximation outlier detection and the detect-then-decompose pipeline.
//!
//! Every column is expressed as a sparse combination of the others through the
//! program `min ‖D z‖₁ + λ‖z₋ᵢ‖₁, zᵢ = 1`. Inlier columns leave a sparse
//! residual `D z`; outliers cannot be cancelled and leave a dense one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};
use crate::l1_solvers::{sparse_rep_matrix, SolveOutcome, SolverConfig, SparseRepBatch};
use crate::mat_core::DenseMatrix;
use crate::pcp::{pcp_decompose, row_lambda, PcpResult};

/// Weight used when [`SaConfig::lambda`] is unset.
pub const DEFAULT_LAMBDA: f64 = 1.0;
use crate::synth::{generate_instance, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    /// Sparse-representation weight on unit-norm columns; `None` means [`DEFAULT_LAMBDA`].
    pub lambda: Option<f64>,
    pub mag_threshold: f64,
    pub outlier_fraction_threshold: f64,
    /// Residual entries at most this fraction of `‖dᵢ‖∞` count as exact zeros.
    pub residual_floor: f64,
    pub method: RepSolver,
    pub solver: SolverConfig,
}

/// Engine used for the per-column sparse-representation programs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepSolver {
    /// Simplex or vertex descent, optimal to rounding.
    #[default]
    Exact,
    /// Fused ADMM over all columns, bounded by `solver.max_iters`.
    Admm,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            lambda: None,
            mag_threshold: 0.1,
            outlier_fraction_threshold: 0.4,
            residual_floor: 1e-6,
            method: RepSolver::Exact,
            solver: SolverConfig::default(),
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.mag_threshold) || !unit(self.outlier_fraction_threshold) {
            return invalid("detection thresholds must lie in (0, 1)");
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return invalid(format!("lambda must be positive, got {l}"));
            }
        }
        if !(self.residual_floor >= 0.0 && self.residual_floor < 1.0) {
            return invalid("residual_floor must lie in [0, 1)");
        }
        self.solver.validate()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityCertificate {
    pub column_index: usize,
    /// `|D z| / max |D z|`.
    pub normalized_residual: Vec<f64>,
    /// Share of the `N₁` entries above the magnitude threshold.
    pub dominant_fraction: f64,
    pub dominant_count: usize,
    pub is_outlier: bool,
}

pub fn sparsity_certificate(residual: &[f64], col_index: usize, cfg: &SaConfig) -> SparsityCertificate {
    let n = residual.len();
    let top = residual.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let normalized_residual: Vec<f64> =
        if top > 0.0 { residual.iter().map(|x| x.abs() / top).collect() } else { vec![0.0; n] };
    let dominant_count = normalized_residual.iter().filter(|&&h| h > cfg.mag_threshold).count();
    let dominant_fraction = if n == 0 { 0.0 } else { dominant_count as f64 / n as f64 };
    SparsityCertificate {
        column_index: col_index,
        normalized_residual,
        dominant_fraction,
        dominant_count,
        is_outlier: dominant_fraction > cfg.outlier_fraction_threshold,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSolve {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub lambda: f64,
    /// One entry per column, in column order.
    pub certificates: Vec<SparsityCertificate>,
    pub solves: Vec<ColumnSolve>,
    /// Sorted indices of the flagged columns.
    pub outliers: Vec<usize>,
}

impl DetectionReport {
    pub fn all_converged(&self) -> bool {
        self.solves.iter().all(|s| s.converged)
    }
}

/// Runs the sparse-representation program for every column and classifies it.
///
/// Columns are rescaled to unit ℓ2 norm before solving, so `λ` is measured
/// against unit-norm data and the classification of a column does not depend
/// on its scale.
pub fn detect_outliers(d: &DenseMatrix, cfg: &SaConfig) -> Result<DetectionReport> {
    let all: Vec<usize> = (0..d.cols()).collect();
    detect_matrix(d.as_matrix(), &all, cfg)
}

/// Like [`detect_outliers`], restricted to the columns in `targets`. The
/// certificates follow the order of `targets`.
pub fn detect_columns(d: &DenseMatrix, targets: &[usize], cfg: &SaConfig) -> Result<DetectionReport> {
    if let Some(&j) = targets.iter().find(|&&j| j >= d.cols()) {
        return invalid(format!("column {j} out of range for {} columns", d.cols()));
    }
    detect_matrix(d.as_matrix(), targets, cfg)
}

/// Minimum number of columns solved together in one fused batch.
const MIN_CHUNK: usize = 16;

pub(crate) fn detect_matrix(d: &DMatrix<f64>, targets: &[usize], cfg: &SaConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let n2 = d.ncols();
    if n2 < 2 {
        return invalid("outlier detection needs at least two columns");
    }
    let lambda = cfg.lambda();
    let mut unit = d.clone();
    for mut col in unit.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col.unscale_mut(n);
        }
    }
    let d = &unit;
    let outcomes: Vec<SolveOutcome> = match cfg.method {
        RepSolver::Exact => targets
            .par_iter()
            .map(|&i| sparse_rep_matrix(d, i, lambda, &cfg.solver))
            .collect::<Result<_>>()?,
        RepSolver::Admm => {
            let batch = SparseRepBatch::new(d, lambda, &cfg.solver)?;
            let chunk = n2.div_ceil(rayon::current_num_threads()).max(MIN_CHUNK);
            targets.par_chunks(chunk).flat_map_iter(|c| batch.solve(c)).collect()
        }
    };

    let mut certificates = Vec::with_capacity(targets.len());
    let mut solves = Vec::with_capacity(targets.len());
    for (&i, out) in targets.iter().zip(outcomes) {
        let mut resid = d * DVector::from_column_slice(&out.solution);
        let floor = cfg.residual_floor * d.column(i).amax();
        resid.apply(|v| {
            if v.abs() <= floor {
                *v = 0.0
            }
        });
        certificates.push(sparsity_certificate(resid.as_slice(), i, cfg));
        solves.push(ColumnSolve { iterations: out.iterations, converged: out.converged, objective: out.objective });
    }
    let mut outliers: Vec<usize> = certificates.iter().filter(|c| c.is_outlier).map(|c| c.column_index).collect();
    outliers.sort_unstable();
    Ok(DetectionReport { lambda, certificates, solves, outliers })
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    pub outliers: Vec<usize>,
    pub report: DetectionReport,
    pub pcp_iterations: usize,
    pub pcp_converged: bool,
    pub pcp_constraint_residual: f64,
}

/// Scatters the columns of `part` into an `n1 × n2` frame at `cols`.
pub(crate) fn embed_columns(part: &DMatrix<f64>, cols: &[usize], n2: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(part.nrows(), n2);
    for (k, &j) in cols.iter().enumerate() {
        out.set_column(j, &part.column(k));
    }
    out
}

pub fn sa_decompose(d: &DenseMatrix, cfg: &SaConfig) -> Result<Decomposition> {
    let report = detect_outliers(d, cfg)?;
    let (n1, n2) = (d.rows(), d.cols());
    if report.outliers.len() == n2 {
        return Err(LscError::DegenerateResult("every column was flagged as an outlier".into()));
    }
    let keep: Vec<usize> = (0..n2).filter(|j| report.outliers.binary_search(j).is_err()).collect();
    let m = d.select_columns(&keep)?;
    let PcpResult { low_rank, sparse, iterations, converged, constraint_residual, .. } =
        pcp_decompose(&m, row_lambda(n1), &cfg.solver)?;
    Ok(Decomposition {
        low_rank: DenseMatrix::from_matrix(embed_columns(low_rank.as_matrix(), &keep, n2))?,
        sparse: DenseMatrix::from_matrix(embed_columns(sparse.as_matrix(), &keep, n2))?,
        outliers: report.outliers.clone(),
        report,
        pcp_iterations: iterations,
        pcp_converged: converged,
        pcp_constraint_residual: constraint_residual,
    })
}

/// Multipliers of [`DEFAULT_LAMBDA`] tried by [`calibrate_lambda`].
pub const LAMBDA_GRID: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 5.0];

/// Per-class cap on the held-out columns solved for each grid point.
const CALIBRATION_PER_CLASS: usize = 30;

fn spread(pool: &[usize], take: usize) -> impl Iterator<Item = usize> + '_ {
    let take = take.min(pool.len());
    (0..take).map(move |k| pool[k * pool.len() / take])
}

/// Smallest outlier `dominant_fraction` minus the largest inlier one.
pub fn certificate_margin(report: &DetectionReport, truth: &[usize]) -> f64 {
    let mut lo_out = f64::INFINITY;
    let mut hi_in = f64::NEG_INFINITY;
    for c in &report.certificates {
        if truth.binary_search(&c.column_index).is_ok() {
            lo_out = lo_out.min(c.dominant_fraction);
        } else {
            hi_in = hi_in.max(c.dominant_fraction);
        }
    }
    match (lo_out.is_finite(), hi_in.is_finite()) {
        (true, true) => lo_out - hi_in,
        (true, false) => lo_out,
        (false, true) => 1.0 - hi_in,
        (false, false) => 0.0,
    }
}

/// Picks λ from the grid by the certificate margin on a held-out instance,
/// scoring a spread of its outlier and inlier columns.
/// Returns the chosen λ and its margin; ties go to the smaller λ.
pub fn calibrate_lambda(held_out: &ModelParams, cfg: &SaConfig) -> Result<(f64, f64)> {
    let inst = generate_instance(held_out)?;
    let mut cols: Vec<usize> = spread(&inst.outlier_indices, CALIBRATION_PER_CLASS)
        .chain(spread(&inst.inlier_indices(), CALIBRATION_PER_CLASS))
        .collect();
    cols.sort_unstable();
    let mut best = (DEFAULT_LAMBDA * LAMBDA_GRID[0], f64::NEG_INFINITY);
    for mult in LAMBDA_GRID {
        let lambda = DEFAULT_LAMBDA * mult;
        let trial = SaConfig { lambda: Some(lambda), ..cfg.clone() };
        let report = detect_columns(&inst.d, &cols, &trial)?;
        let margin = certificate_margin(&report, &inst.outlier_indices);
        if margin > best.1 {
            best = (lambda, margin);
        }
    }
    Ok(best)
}
