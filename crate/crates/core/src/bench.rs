//! Monte Carlo sweeps and the outlier-pursuit recovery table.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};
use crate::l1_solvers::SolverConfig;
use crate::mat_core::{orthonormal_basis, subspace_recovery_error};
use crate::pcp::{default_gamma, pcp_decompose, pcp_outlier_decompose, row_lambda, Lambda};
use crate::randomized::{randomized_decompose, score_sketch, SketchConfig, RANK_TOL};
use crate::sa::{detect_outliers, sa_decompose, SaConfig};
use crate::synth::{generate_instance, mix64, Instance, ModelParams};

pub const SWEEP_HEADER: &str = "axis1,axis2,success_rate,mean_metric,trials";
pub const TABLE1_HEADER: &str = "r,error,control_error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[serde(rename = "r")]
    Rank,
    Rho,
    #[serde(rename = "k")]
    Outliers,
    N1,
    N2,
    M1,
    M2,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rank => "r",
            Axis::Rho => "rho",
            Axis::Outliers => "k",
            Axis::N1 => "n1",
            Axis::N2 => "n2",
            Axis::M1 => "m1",
            Axis::M2 => "m2",
        }
    }

    fn is_integer(self) -> bool {
        self != Axis::Rho
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "r" | "rank" => Axis::Rank,
            "rho" => Axis::Rho,
            "k" | "outliers" => Axis::Outliers,
            "n1" => Axis::N1,
            "n2" => Axis::N2,
            "m1" => Axis::M1,
            "m2" => Axis::M2,
            other => return Err(format!("unknown sweep axis '{other}'")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl FromStr for AxisGrid {
    type Err = String;

    /// Parses `name=v1,v2,...`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, list) = s.split_once('=').ok_or_else(|| format!("expected name=v1,v2,... in '{s}'"))?;
        let axis = name.trim().parse()?;
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad grid value '{v}': {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(AxisGrid { axis, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    /// The detected outlier set equals the true one.
    OutlierExact,
    /// Rank, exact outlier set and `‖(I − UUᵀ)Û‖_F ≤ 1e-3`.
    #[serde(alias = "eq17")]
    SketchRecovery,
    /// Subspace log-error strictly below the given value.
    LogErrorBelow(f64),
}

impl FromStr for SuccessRule {
    type Err = String;

    /// Accepts `outlier_exact`, `sketch_recovery` (alias `eq17`) or `log_error_below:<x>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "outlier_exact" => Ok(SuccessRule::OutlierExact),
            "sketch_recovery" | "eq17" => Ok(SuccessRule::SketchRecovery),
            _ => {
                let x = s
                    .strip_prefix("log_error_below:")
                    .or_else(|| s.strip_prefix("log_error_below="))
                    .ok_or_else(|| format!("unknown success rule '{s}'"))?;
                x.parse().map(SuccessRule::LogErrorBelow).map_err(|e| format!("bad threshold '{x}': {e}"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMethod {
    Sa,
    Pcp,
    PcpL12,
    Randomized,
}

impl FromStr for SweepMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "sa" => SweepMethod::Sa,
            "pcp" => SweepMethod::Pcp,
            "pcp-l12" => SweepMethod::PcpL12,
            "randomized" => SweepMethod::Randomized,
            _ => return Err(format!("unknown method '{s}'")),
        })
    }
}

fn default_trials() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis1: AxisGrid,
    #[serde(default)]
    pub axis2: Option<AxisGrid>,
    /// Model parameters for everything not on an axis. The seed is ignored.
    pub fixed: ModelParams,
    #[serde(default = "default_trials")]
    pub trials_per_cell: usize,
    pub success_rule: SuccessRule,
    #[serde(default)]
    pub base_seed: u64,
    pub method: SweepMethod,
    #[serde(default)]
    pub sa: SaConfig,
    /// Column sketch size for the randomized method.
    #[serde(default)]
    pub m1: usize,
    /// Row sketch size for the randomized method.
    #[serde(default)]
    pub m2: usize,
    /// Weight of the entrywise term for the convex baselines.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SweepSpec {
    pub fn new(axis1: AxisGrid, fixed: ModelParams, method: SweepMethod, success_rule: SuccessRule) -> Self {
        SweepSpec {
            axis1,
            axis2: None,
            fixed,
            trials_per_cell: default_trials(),
            success_rule,
            base_seed: 0,
            method,
            sa: SaConfig::default(),
            m1: 0,
            m2: 0,
            lambda: None,
            gamma: None,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for grid in std::iter::once(&self.axis1).chain(self.axis2.as_ref()) {
            if grid.values.is_empty() {
                return invalid(format!("grid for axis '{}' is empty", grid.axis.name()));
            }
            for &v in &grid.values {
                if !v.is_finite() || v < 0.0 || (grid.axis.is_integer() && v.fract() != 0.0) {
                    return invalid(format!("axis '{}' cannot take the value {v}", grid.axis.name()));
                }
            }
        }
        if let Some(a2) = &self.axis2 {
            if a2.axis == self.axis1.axis {
                return invalid("the two sweep axes must differ");
            }
        }
        if self.trials_per_cell == 0 {
            return invalid("trials_per_cell must be at least 1");
        }
        let compatible = match self.success_rule {
            SuccessRule::SketchRecovery => self.method == SweepMethod::Randomized,
            SuccessRule::OutlierExact => self.method != SweepMethod::Pcp,
            SuccessRule::LogErrorBelow(x) => x.is_finite(),
        };
        if !compatible {
            return invalid(format!("success rule {:?} does not apply to method {:?}", self.success_rule, self.method));
        }
        self.sa.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    fn cells(&self) -> Vec<(f64, Option<f64>)> {
        let mut out = Vec::new();
        for &a in &self.axis1.values {
            match &self.axis2 {
                Some(g) => out.extend(g.values.iter().map(|&b| (a, Some(b)))),
                None => out.push((a, None)),
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub axis1: f64,
    pub axis2: Option<f64>,
    pub successes: usize,
    pub trials: usize,
    pub success_rate: f64,
    /// Mean metric over trials that produced one; NaN when none did.
    pub mean_metric: f64,
    /// Summed trial time in seconds.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis1: Axis,
    pub axis2: Option<Axis>,
    pub cells: Vec<CellResult>,
    pub wall_clock_s: f64,
}

/// Outcome of a single Monte Carlo trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub success: bool,
    pub metric: Option<f64>,
}

impl Trial {
    const FAILED: Trial = Trial { success: false, metric: None };
}

/// Seed of trial `trial` in the cell at the given axis values, independent of grid order.
pub fn trial_seed(base: u64, cell: (f64, Option<f64>), trial: usize) -> u64 {
    let second = cell.1.map_or(u64::MAX, f64::to_bits);
    mix64(mix64(mix64(base, cell.0.to_bits()), second), trial as u64)
}

struct TrialSetup {
    params: ModelParams,
    m1: usize,
    m2: usize,
}

fn apply(setup: &mut TrialSetup, axis: Axis, v: f64) {
    let n = v as usize;
    match axis {
        Axis::Rank => setup.params.rank_r = n,
        Axis::Rho => setup.params.rho = v,
        Axis::Outliers => setup.params.num_outliers_k = n,
        Axis::N1 => setup.params.n1 = n,
        Axis::N2 => setup.params.n2 = n,
        Axis::M1 => setup.m1 = n,
        Axis::M2 => setup.m2 = n,
    }
}

/// Subspace log-error of the top-`r` left singular space of `low_rank`.
pub fn low_rank_log_error(inst: &Instance, low_rank: &DMatrix<f64>) -> Result<f64> {
    let u_hat = orthonormal_basis(low_rank, RANK_TOL, Some(inst.params.rank_r));
    subspace_recovery_error(&inst.column_space(), &u_hat)
}

fn run_trial(spec: &SweepSpec, cell: (f64, Option<f64>), seed: u64) -> Result<Trial> {
    let mut setup = TrialSetup { params: spec.fixed.clone().with_seed(seed), m1: spec.m1, m2: spec.m2 };
    apply(&mut setup, spec.axis1.axis, cell.0);
    if let (Some(g), Some(v)) = (&spec.axis2, cell.1) {
        apply(&mut setup, g.axis, v);
    }
    let inst = generate_instance(&setup.params)?;
    let (n1, n2) = (inst.d.rows(), inst.d.cols());
    let log_rule = |e: f64| match spec.success_rule {
        SuccessRule::LogErrorBelow(x) => Trial { success: e < x, metric: Some(e) },
        _ => unreachable!(),
    };
    let outlier_rule = |found: &[usize]| {
        let wrong = found.iter().filter(|j| inst.outlier_indices.binary_search(j).is_err()).count()
            + inst.outlier_indices.iter().filter(|j| !found.contains(j)).count();
        Trial { success: found == inst.outlier_indices.as_slice(), metric: Some(wrong as f64) }
    };
    Ok(match (spec.method, spec.success_rule) {
        (SweepMethod::Sa, SuccessRule::OutlierExact) => outlier_rule(&detect_outliers(&inst.d, &spec.sa)?.outliers),
        (SweepMethod::Sa, _) => {
            let dec = sa_decompose(&inst.d, &spec.sa)?;
            log_rule(low_rank_log_error(&inst, dec.low_rank.as_matrix())?)
        }
        (SweepMethod::Pcp, _) => {
            let lambda = spec.lambda.unwrap_or_else(|| Lambda::Auto.resolve(n1, n2));
            let res = pcp_decompose(&inst.d, lambda, &spec.solver)?;
            log_rule(low_rank_log_error(&inst, res.low_rank.as_matrix())?)
        }
        (SweepMethod::PcpL12, rule) => {
            let lambda = spec.lambda.unwrap_or_else(|| row_lambda(n1));
            let gamma = spec.gamma.unwrap_or_else(|| default_gamma(n1, n2));
            let res = pcp_outlier_decompose(&inst.d, lambda, gamma, &spec.solver)?;
            match rule {
                SuccessRule::OutlierExact => outlier_rule(&res.reported_columns()),
                _ => log_rule(low_rank_log_error(&inst, res.low_rank.as_matrix())?),
            }
        }
        (SweepMethod::Randomized, rule) => {
            let mut cfg = SketchConfig::new(setup.m1, setup.m2, seed);
            cfg.sa = spec.sa.clone();
            let res = randomized_decompose(&inst.d, &cfg)?;
            match rule {
                SuccessRule::SketchRecovery => {
                    let score = score_sketch(&res, &inst.column_space(), &inst.outlier_indices);
                    Trial { success: score.success, metric: Some(score.projection_residual) }
                }
                SuccessRule::OutlierExact => outlier_rule(&res.outlier_indices),
                SuccessRule::LogErrorBelow(_) => {
                    log_rule(subspace_recovery_error(&inst.column_space(), res.basis_u_hat.as_matrix())?)
                }
            }
        }
    })
}

/// Runs every trial of every cell; trial errors count as failures.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let start = Instant::now();
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..spec.trials_per_cell).map(move |t| (c, t))).collect();
    let outcomes: Vec<(Trial, f64)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let t0 = Instant::now();
            let trial = run_trial(spec, cells[c], trial_seed(spec.base_seed, cells[c], t)).unwrap_or(Trial::FAILED);
            (trial, t0.elapsed().as_secs_f64())
        })
        .collect();
    let cells = cells
        .iter()
        .enumerate()
        .map(|(c, &(a1, a2))| {
            let chunk = &outcomes[c * spec.trials_per_cell..(c + 1) * spec.trials_per_cell];
            let successes = chunk.iter().filter(|(t, _)| t.success).count();
            let metrics: Vec<f64> = chunk.iter().filter_map(|(t, _)| t.metric).collect();
            let mean_metric =
                if metrics.is_empty() { f64::NAN } else { metrics.iter().sum::<f64>() / metrics.len() as f64 };
            CellResult {
                axis1: a1,
                axis2: a2,
                successes,
                trials: chunk.len(),
                success_rate: successes as f64 / chunk.len() as f64,
                mean_metric,
                wall_clock_s: chunk.iter().map(|(_, s)| s).sum(),
            }
        })
        .collect();
    Ok(SweepResult {
        axis1: spec.axis1.axis,
        axis2: spec.axis2.as_ref().map(|g| g.axis),
        cells,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// CSV rendering of a sweep; timing is left out so the bytes are reproducible.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in &result.cells {
        let a2 = c.axis2.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{a2},{},{},{}", c.axis1, c.success_rate, c.mean_metric, c.trials);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Params {
    pub n1: usize,
    pub n2: usize,
    pub rho: f64,
    pub num_outliers_k: usize,
    pub ranks: Vec<usize>,
    pub seed: u64,
    /// Defaults to `1/√N₁`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Defaults to [`table1_gamma`].
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for Table1Params {
    fn default() -> Self {
        Table1Params {
            n1: 200,
            n2: 400,
            rho: 0.01,
            num_outliers_k: 100,
            ranks: vec![2, 5, 10, 15],
            seed: 0,
            lambda: None,
            gamma: None,
            solver: SolverConfig::default(),
        }
    }
}

/// `3/√N₁`, the column weight used for the recovery table.
pub fn table1_gamma(n1: usize) -> f64 {
    3.0 / (n1 as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub r: usize,
    /// `‖S′ − Ŝ′‖_F / ‖S′‖_F` over inlier columns with outliers present.
    pub error: f64,
    /// The same error for plain PCP on an outlier-free instance.
    pub control_error: f64,
    pub converged: bool,
    pub control_converged: bool,
}

/// Relative Frobenius error of `s_hat` against the true sparse part on inlier columns.
pub fn inlier_sparse_error(inst: &Instance, s_hat: &DMatrix<f64>) -> f64 {
    let cols = inst.inlier_indices();
    let s = inst.s.as_matrix().select_columns(cols.iter());
    let sh = s_hat.select_columns(cols.iter());
    let denom = s.norm();
    if denom == 0.0 {
        sh.norm()
    } else {
        (&s - &sh).norm() / denom
    }
}

pub fn run_table1(p: &Table1Params) -> Result<Vec<Table1Row>> {
    if p.ranks.is_empty() {
        return invalid("no ranks requested");
    }
    p.solver.validate()?;
    let lambda = p.lambda.unwrap_or_else(|| row_lambda(p.n1));
    let gamma = p.gamma.unwrap_or_else(|| table1_gamma(p.n1));
    p.ranks
        .par_iter()
        .map(|&r| {
            let params = ModelParams::new(p.n1, p.n2, r, p.rho, p.num_outliers_k, p.seed);
            let inst = generate_instance(&params)?;
            let res = pcp_outlier_decompose(&inst.d, lambda, gamma, &p.solver)?;
            let control = generate_instance(&ModelParams { num_outliers_k: 0, ..params })?;
            let ctl = pcp_decompose(&control.d, lambda, &p.solver)?;
            Ok::<_, LscError>(Table1Row {
                r,
                error: inlier_sparse_error(&inst, res.sparse.as_matrix()),
                control_error: inlier_sparse_error(&control, ctl.sparse.as_matrix()),
                converged: res.converged,
                control_converged: ctl.converged,
            })
        })
        .collect()
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from(TABLE1_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{},{},{}", row.r, row.error, row.control_error);
    }
    out
}
