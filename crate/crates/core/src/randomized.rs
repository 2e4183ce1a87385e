//! Sketched decomposition: learn the column space from a column sample, fit
//! every column against it on a row sample, then flag the columns whose
//! sketched residual is dense.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};
use crate::l1_solvers::{LadSolver, SolveOutcome};
use crate::mat_core::{orthonormal_basis, projection_residual, DenseMatrix};
use crate::pcp::{pcp_decompose, row_lambda};
use crate::sa::{detect_matrix, sparsity_certificate, DetectionReport, SaConfig};
use crate::synth::{mix64, rng_from};

/// Relative singular-value cut used to read off the rank of the sketched low-rank part.
pub const RANK_TOL: f64 = 1e-6;

/// Threshold on `‖(I − UUᵀ)Û‖_F` for a sketch to count as a success.
pub const EQ17_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SketchConfig {
    pub m1: usize,
    pub m2: usize,
    pub seed: u64,
    pub sa: SaConfig,
    /// Dominant-entry fraction of a sketched residual above which its column is an outlier.
    pub sparse_col_threshold: f64,
    /// Forces the rank of `Û` instead of reading it from the spectrum.
    pub rank_hint: Option<usize>,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig { m1: 1, m2: 1, seed: 0, sa: SaConfig::default(), sparse_col_threshold: 0.4, rank_hint: None }
    }
}

impl SketchConfig {
    pub fn new(m1: usize, m2: usize, seed: u64) -> Self {
        SketchConfig { m1, m2, seed, ..Default::default() }
    }

    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        if self.m1 == 0 || self.m1 > n2 {
            return invalid(format!("m1 = {} must lie in 1..={n2}", self.m1));
        }
        if self.m2 == 0 || self.m2 > n1 {
            return invalid(format!("m2 = {} must lie in 1..={n1}", self.m2));
        }
        if !(self.sparse_col_threshold > 0.0 && self.sparse_col_threshold < 1.0) {
            return invalid("sparse_col_threshold must lie in (0, 1)");
        }
        if self.rank_hint == Some(0) {
            return invalid("rank_hint must be positive");
        }
        self.sa.validate()
    }

    fn column_seed(&self) -> u64 {
        mix64(self.seed, 1)
    }

    fn row_seed(&self) -> u64 {
        mix64(self.seed, 2)
    }
}

/// Draws `m` distinct indices out of `0..n`, uniformly, returned in increasing order.
pub fn sample_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return invalid(format!("cannot sample {m} of {n} indices"));
    }
    let mut picked = index::sample(&mut rng_from(seed), n, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform column sample without replacement. Returns the submatrix and the
/// original index of each of its columns.
pub fn sample_columns(d: &DenseMatrix, m1: usize, seed: u64) -> Result<(DenseMatrix, Vec<usize>)> {
    let cols = sample_indices(d.cols(), m1, seed)?;
    Ok((d.select_columns(&cols)?, cols))
}

#[derive(Clone, Debug, Serialize)]
pub struct ColumnSpaceReport {
    /// Columns of `D` in the sketch.
    pub sampled_columns: Vec<usize>,
    /// Sketch columns flagged as outliers, as indices into `D`.
    pub sketch_outliers: Vec<usize>,
    pub rank_hat: usize,
    pub detection: DetectionReport,
    pub pcp_iterations: usize,
    pub pcp_converged: bool,
}

/// Learns an orthonormal basis for the column space of the low-rank part from
/// `m1` sampled columns.
pub fn learn_column_space(d: &DenseMatrix, cfg: &SketchConfig) -> Result<(DenseMatrix, ColumnSpaceReport)> {
    cfg.validate(d.rows(), d.cols())?;
    let (sketch, sampled_columns) = sample_columns(d, cfg.m1, cfg.column_seed())?;
    let all: Vec<usize> = (0..cfg.m1).collect();
    let detection = if cfg.m1 >= 2 {
        detect_matrix(sketch.as_matrix(), &all, &cfg.sa)?
    } else {
        DetectionReport { lambda: cfg.sa.lambda(), certificates: Vec::new(), solves: Vec::new(), outliers: Vec::new() }
    };
    let keep: Vec<usize> = all.iter().copied().filter(|j| detection.outliers.binary_search(j).is_err()).collect();
    if keep.is_empty() {
        return Err(LscError::ResampleNeeded {
            seed: cfg.seed,
            reason: "every sampled column was flagged as an outlier".into(),
        });
    }
    let m = sketch.select_columns(&keep)?;
    let pcp = pcp_decompose(&m, row_lambda(d.rows()), &cfg.sa.solver)?;
    let u_hat = orthonormal_basis(pcp.low_rank.as_matrix(), RANK_TOL, cfg.rank_hint);
    let report = ColumnSpaceReport {
        sketch_outliers: detection.outliers.iter().map(|&j| sampled_columns[j]).collect(),
        sampled_columns,
        rank_hat: u_hat.ncols(),
        detection,
        pcp_iterations: pcp.iterations,
        pcp_converged: pcp.converged,
    };
    Ok((DenseMatrix::from_matrix(u_hat)?, report))
}

#[derive(Clone, Debug)]
pub struct Representation {
    /// `r̂ × N₂` coefficients.
    pub q_hat: DenseMatrix,
    /// Sketched residual `Φ₂ᵀ D − Φ₂ᵀ Û Q̂`, `m₂ × N₂`.
    pub residual: DenseMatrix,
    pub sampled_rows: Vec<usize>,
    pub all_converged: bool,
}

/// Fits every column of `D` on `span(Û)` by least absolute deviations over `m2` sampled rows.
pub fn learn_representation(d: &DenseMatrix, u_hat: &DenseMatrix, cfg: &SketchConfig) -> Result<Representation> {
    cfg.validate(d.rows(), d.cols())?;
    if u_hat.rows() != d.rows() {
        return invalid(format!("basis has {} rows, data has {}", u_hat.rows(), d.rows()));
    }
    let r_hat = u_hat.cols();
    if r_hat == 0 {
        return Err(LscError::DegenerateResult("the learned basis is empty".into()));
    }
    if cfg.m2 < r_hat {
        return invalid(format!("m2 = {} is below the basis rank {r_hat}", cfg.m2));
    }
    let rows = sample_indices(d.rows(), cfg.m2, cfg.row_seed())?;
    let d_rows = d.as_matrix().select_rows(&rows);
    let x = u_hat.as_matrix().select_rows(&rows);
    let solver = LadSolver::new(&x, &cfg.sa.solver)?;
    let outcomes: Vec<SolveOutcome> = (0..d.cols())
        .into_par_iter()
        .map(|j| solver.solve(d_rows.column(j).as_slice()))
        .collect::<Result<_>>()?;
    let all_converged = outcomes.iter().all(|o| o.converged);
    let q = DMatrix::from_fn(r_hat, d.cols(), |i, j| outcomes[j].solution[i]);
    let residual = &d_rows - &x * &q;
    Ok(Representation {
        q_hat: DenseMatrix::from_matrix(q)?,
        residual: DenseMatrix::from_matrix(residual)?,
        sampled_rows: rows,
        all_converged,
    })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub column_space_s: f64,
    pub representation_s: f64,
    pub assembly_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SketchDiagnostics {
    pub rank_hat: usize,
    pub sampled_columns: Vec<usize>,
    pub sampled_rows: Vec<usize>,
    pub sketch_outliers: Vec<usize>,
    /// Dominant-entry fraction of every sketched residual column.
    pub residual_fractions: Vec<f64>,
    pub pcp_converged: bool,
    pub lad_all_converged: bool,
    pub timings: StageTimings,
}

#[derive(Clone, Debug)]
pub struct RandomizedResult {
    pub basis_u_hat: DenseMatrix,
    pub q_hat: DenseMatrix,
    pub outlier_indices: Vec<usize>,
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    pub diagnostics: SketchDiagnostics,
}

/// Flags the columns of a sketched residual whose dominant-entry fraction exceeds the threshold.
fn classify_residual(residual: &DMatrix<f64>, d_rows: &DMatrix<f64>, cfg: &SketchConfig) -> (Vec<usize>, Vec<f64>) {
    let rule = SaConfig { outlier_fraction_threshold: cfg.sparse_col_threshold, ..cfg.sa.clone() };
    let mut outliers = Vec::new();
    let mut fractions = Vec::with_capacity(residual.ncols());
    for j in 0..residual.ncols() {
        let floor = cfg.sa.residual_floor * d_rows.column(j).amax();
        let col: Vec<f64> = residual.column(j).iter().map(|&v| if v.abs() <= floor { 0.0 } else { v }).collect();
        let cert = sparsity_certificate(&col, j, &rule);
        if cert.is_outlier {
            outliers.push(j);
        }
        fractions.push(cert.dominant_fraction);
    }
    (outliers, fractions)
}

pub fn randomized_decompose(d: &DenseMatrix, cfg: &SketchConfig) -> Result<RandomizedResult> {
    let start = Instant::now();
    let (u_hat, cs) = learn_column_space(d, cfg)?;
    let column_space_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let rep = learn_representation(d, &u_hat, cfg)?;
    let representation_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let d_rows = d.as_matrix().select_rows(&rep.sampled_rows);
    let (outliers, residual_fractions) = classify_residual(rep.residual.as_matrix(), &d_rows, cfg);
    let fit = u_hat.as_matrix() * rep.q_hat.as_matrix();
    let mut sparse = d.as_matrix() - &fit;
    let mut low_rank = fit;
    for &j in &outliers {
        low_rank.column_mut(j).fill(0.0);
        sparse.column_mut(j).fill(0.0);
    }
    let assembly_s = start.elapsed().as_secs_f64();

    let diagnostics = SketchDiagnostics {
        rank_hat: cs.rank_hat,
        sampled_columns: cs.sampled_columns,
        sampled_rows: rep.sampled_rows,
        sketch_outliers: cs.sketch_outliers,
        residual_fractions,
        pcp_converged: cs.pcp_converged,
        lad_all_converged: rep.all_converged,
        timings: StageTimings { column_space_s, representation_s, assembly_s },
    };
    Ok(RandomizedResult {
        basis_u_hat: u_hat,
        q_hat: rep.q_hat,
        outlier_indices: outliers,
        low_rank: DenseMatrix::from_matrix(low_rank)?,
        sparse: DenseMatrix::from_matrix(sparse)?,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchScore {
    pub rank_matches: bool,
    pub outliers_exact: bool,
    pub projection_residual: f64,
    pub success: bool,
}

/// Success test for a sketched run: correct rank, exact outlier set and
/// `‖(I − UUᵀ)Û‖_F ≤ 1e-3`. `true_outliers` must be sorted.
pub fn score_sketch(result: &RandomizedResult, u: &DMatrix<f64>, true_outliers: &[usize]) -> SketchScore {
    let u_hat = result.basis_u_hat.as_matrix();
    let rank_matches = u_hat.ncols() == u.ncols();
    let outliers_exact = result.outlier_indices == true_outliers;
    let projection_residual = projection_residual(u, u_hat);
    SketchScore {
        rank_matches,
        outliers_exact,
        projection_residual,
        success: rank_matches && outliers_exact && projection_residual <= EQ17_TOL,
    }
}
