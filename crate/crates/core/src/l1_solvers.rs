//! ℓ1 optimization engines.
//!
//! Every solver runs over-relaxed ADMM with residual-balancing penalty
//! updates. `lad_solve` finishes with an exact vertex refinement (a simplex
//! pivot sequence warm-started from the ADMM iterate), so converged answers are
//! optimal up to rounding rather than up to the ADMM tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};
use crate::mat_core::{lstsq, soft, svd_full, DenseMatrix};
use crate::simplex::penalized_lad;
use crate::synth::rng_from;
use rand::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub admm_rho: f64,
    pub over_relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 2000, abs_tol: 1e-7, rel_tol: 1e-5, admm_rho: 1.0, over_relaxation: 1.5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return invalid("solver tolerances must be positive");
        }
        if !(self.admm_rho > 0.0 && self.admm_rho.is_finite()) {
            return invalid("admm_rho must be positive");
        }
        if !(1.0..=1.8).contains(&self.over_relaxation) {
            return invalid("over_relaxation must lie in [1, 1.8]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

const BALANCE_RATIO: f64 = 10.0;
const BALANCE_FACTOR: f64 = 2.0;
const CHECK_EVERY: usize = 10;

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Reusable least-absolute-deviations solver for a fixed design matrix.
#[derive(Clone, Debug)]
pub struct LadSolver {
    x: DMatrix<f64>,
    pinv: DMatrix<f64>,
    cfg: SolverConfig,
}

impl LadSolver {
    pub fn new(x: &DMatrix<f64>, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, p) = x.shape();
        if m == 0 || p == 0 {
            return invalid("design matrix must be non-empty");
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("design matrix has non-finite entries");
        }
        if m < p {
            return Err(LscError::Degenerate(format!("LAD needs m >= p, got {m} x {p}")));
        }
        let (u, sigma, v) = svd_full(x);
        let smax = sigma[0];
        let smin = sigma[p - 1];
        if !(smax > 0.0) || smin <= 1e-10 * smax {
            return Err(LscError::Degenerate(format!(
                "design matrix is numerically rank deficient (sigma_min / sigma_max = {:.3e})",
                if smax > 0.0 { smin / smax } else { 0.0 }
            )));
        }
        let mut vs = v.columns(0, p).into_owned();
        for (j, s) in sigma.iter().take(p).enumerate() {
            vs.column_mut(j).scale_mut(1.0 / s);
        }
        let pinv = vs * u.columns(0, p).transpose();
        Ok(LadSolver { x: x.clone(), pinv, cfg: cfg.clone() })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn solve(&self, y: &[f64]) -> Result<SolveOutcome> {
        let (m, p) = self.x.shape();
        if y.len() != m {
            return invalid(format!("response length {} does not match {} rows", y.len(), m));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("response has non-finite entries");
        }
        let y = DVector::from_column_slice(y);
        let scale = inf_norm(&y);
        if scale == 0.0 {
            return Ok(SolveOutcome {
                solution: vec![0.0; p],
                objective: 0.0,
                iterations: 0,
                converged: true,
                primal_residual: 0.0,
                dual_residual: 0.0,
            });
        }
        let admm = self.admm(&y, scale);
        let mut q = admm.q;
        let mut objective = l1(&(&self.x * &q - &y));
        let mut converged = admm.converged;
        let mut primal = admm.primal;
        if let Some(v) = vertex_refine(&self.x, &y, &q) {
            if v.objective <= objective * (1.0 + 1e-12) + 1e-300 {
                q = v.q;
                objective = v.objective;
                converged |= v.certified;
                primal = 0.0;
            }
        }
        Ok(SolveOutcome {
            solution: q.iter().copied().collect(),
            objective,
            iterations: admm.iterations,
            converged,
            primal_residual: primal,
            dual_residual: admm.dual,
        })
    }

    fn admm(&self, y: &DVector<f64>, scale: f64) -> AdmmState {
        let cfg = &self.cfg;
        let (m, p) = self.x.shape();
        let alpha = cfg.over_relaxation;
        let mut rho = cfg.admm_rho / scale;
        let mut r = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        let mut q = DVector::zeros(p);
        let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
        let mut iterations = 0;
        let mut converged = false;
        for k in 1..=cfg.max_iters {
            iterations = k;
            q = &self.pinv * (y + &r - &u);
            let xq = &self.x * &q;
            let hat = alpha * &xq + (1.0 - alpha) * (&r + y);
            let r_old = std::mem::replace(&mut r, (&hat - y + &u).map(|v| soft(v, 1.0 / rho)));
            u += &hat - y - &r;
            if k % CHECK_EVERY == 0 || k == cfg.max_iters {
                primal = (&xq - y - &r).norm();
                dual = rho * (self.x.tr_mul(&(&r - &r_old))).norm();
                let eps_pri = (m as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * xq.norm().max(r.norm()).max(y.norm());
                let eps_dual = (p as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * rho * self.x.tr_mul(&u).norm();
                if primal <= eps_pri && dual <= eps_dual {
                    converged = true;
                    break;
                }
                if primal > BALANCE_RATIO * dual {
                    rho *= BALANCE_FACTOR;
                    u /= BALANCE_FACTOR;
                } else if dual > BALANCE_RATIO * primal {
                    rho /= BALANCE_FACTOR;
                    u *= BALANCE_FACTOR;
                }
            }
        }
        AdmmState { q, iterations, converged, primal, dual }
    }
}

struct AdmmState {
    q: DVector<f64>,
    iterations: usize,
    converged: bool,
    primal: f64,
    dual: f64,
}

/// Minimize `‖X q − y‖₁`.
pub fn lad_solve(x: &DenseMatrix, y: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    LadSolver::new(x.as_matrix(), cfg)?.solve(y)
}

pub(crate) struct Vertex {
    pub q: DVector<f64>,
    pub objective: f64,
    pub certified: bool,
    pub pivots: usize,
}

fn pick_basis(x: &DMatrix<f64>, order: &[usize]) -> Option<Vec<usize>> {
    let p = x.ncols();
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    for &j in order {
        let row = x.row(j).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for _ in 0..2 {
            for o in &ortho {
                let c = o.dot(&v);
                v.axpy(-c, o, 1.0);
            }
        }
        let vn = v.norm();
        if vn > 1e-9 * norm {
            ortho.push(v / vn);
            basis.push(j);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_inverse(x: &DMatrix<f64>, basis: &[usize]) -> Option<DMatrix<f64>> {
    let p = x.ncols();
    let mut b = DMatrix::zeros(p, p);
    for (l, &j) in basis.iter().enumerate() {
        b.set_row(l, &x.row(j));
    }
    b.try_inverse()
}

/// Relative sizes of the right-hand-side perturbations tried after a stall.
const PERTURBATIONS: [f64; 2] = [1e-10, 1e-8];

/// Simplex descent over LAD vertices, warm-started at the rows where `q0`
/// leaves the smallest residuals.
///
/// A degenerate vertex can stall the descent before optimality is proven.
/// The descent is then resumed on a slightly perturbed `y`, whose vertices are
/// nondegenerate; a certificate obtained that way bounds the objective gap of
/// the returned point by the size of the perturbation.
pub(crate) fn vertex_refine(x: &DMatrix<f64>, y: &DVector<f64>, q0: &DVector<f64>) -> Option<Vertex> {
    let mut v = vertex_descent(x, y, q0, 1e-12)?;
    if v.certified {
        return Some(v);
    }
    let scale = inf_norm(y).max(x.amax()).max(1e-300);
    let mut rng = rng_from(x.nrows() as u64 ^ 0x9e37_79b9);
    for eps in PERTURBATIONS {
        let noisy = y.map(|t| t + eps * scale * rng.random_range(-1.0..1.0));
        let w = vertex_descent(x, &noisy, &v.q, 0.0)?;
        let pivots = v.pivots + w.pivots;
        let objective = l1(&(x * &w.q - y));
        if w.certified {
            return Some(Vertex { q: w.q, objective, certified: true, pivots });
        }
        if objective <= v.objective {
            v = Vertex { q: w.q, objective, certified: false, pivots };
        } else {
            v.pivots = pivots;
        }
    }
    let gap = lad_subgradient_gap(x, y.as_slice(), v.q.as_slice(), 1e-9 * scale);
    v.certified = gap <= 1e-9 * scale * (x.nrows() as f64);
    Some(v)
}

/// Residuals within `rel_zero` of the data scale are treated as zero.
fn vertex_descent(x: &DMatrix<f64>, y: &DVector<f64>, q0: &DVector<f64>, rel_zero: f64) -> Option<Vertex> {
    let (m, p) = x.shape();
    let r0 = x * q0 - y;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| r0[a].abs().total_cmp(&r0[b].abs()).then(a.cmp(&b)));
    let mut basis = pick_basis(x, &order)?;
    let mut binv = basis_inverse(x, &basis)?;
    let scale = inf_norm(y).max(x.amax()).max(1e-300);
    let zero_tol = rel_zero * scale;

    let recompute = |binv: &DMatrix<f64>, basis: &[usize]| {
        let yz = DVector::from_iterator(p, basis.iter().map(|&j| y[j]));
        let q = binv * yz;
        let mut r = x * &q - y;
        for &j in basis {
            r[j] = 0.0;
        }
        (q, r)
    };
    let (mut q, mut r) = recompute(&binv, &basis);
    let mut in_basis = vec![false; m];
    for &j in &basis {
        in_basis[j] = true;
    }

    let max_pivots = 50 * m + 100;
    let mut certified = false;
    let mut since_refactor = 0;
    let mut pivots = 0;
    while pivots < max_pivots {
        let g = DVector::from_iterator(
            m,
            (0..m).map(|j| if in_basis[j] || r[j].abs() <= zero_tol { 0.0 } else { r[j].signum() }),
        );
        let w = x.tr_mul(&g);
        let lam = -binv.tr_mul(&w);
        let mut candidates: Vec<usize> = (0..p).filter(|&l| lam[l].abs() > 1.0 + 1e-10).collect();
        if candidates.is_empty() {
            certified = true;
            break;
        }
        candidates.sort_by(|&a, &b| lam[b].abs().total_cmp(&lam[a].abs()).then(a.cmp(&b)));
        let mut pivoted = false;
        for &l in &candidates {
            let sigma = lam[l].signum();
            let d = binv.column(l) * sigma;
            let a = x * &d;
            let mut slope = 1.0 - lam[l].abs();
            for j in 0..m {
                if !in_basis[j] && r[j].abs() <= zero_tol {
                    slope += a[j].abs();
                }
            }
            if slope >= -1e-12 {
                continue;
            }
            let mut breaks: Vec<(f64, usize)> = (0..m)
                .filter(|&j| !in_basis[j] && r[j].abs() > zero_tol && r[j] * a[j] < 0.0)
                .map(|j| (-r[j] / a[j], j))
                .collect();
            breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut entering = None;
            for &(t, j) in &breaks {
                slope += 2.0 * a[j].abs();
                if slope >= 0.0 {
                    entering = Some((t, j));
                    break;
                }
            }
            let Some((t, j)) = entering else { continue };
            q.axpy(t, &d, 1.0);
            r.axpy(t, &a, 1.0);
            let leaving = basis[l];
            r[j] = 0.0;
            in_basis[leaving] = false;
            in_basis[j] = true;
            basis[l] = j;
            // Product-form update of the basis inverse for the row swap.
            let xj_binv = x.row(j) * &binv;
            let pivot = xj_binv[l];
            let col_l = binv.column(l) / pivot;
            for k in 0..p {
                if k != l {
                    let f = xj_binv[k];
                    if f != 0.0 {
                        let mut ck = binv.column_mut(k);
                        ck.axpy(-f, &col_l, 1.0);
                    }
                }
            }
            binv.set_column(l, &col_l);
            since_refactor += 1;
            if since_refactor >= 32 {
                binv = basis_inverse(x, &basis)?;
                (q, r) = recompute(&binv, &basis);
                since_refactor = 0;
            }
            pivoted = true;
            pivots += 1;
            break;
        }
        if !pivoted {
            break;
        }
    }
    if let Some(fresh) = basis_inverse(x, &basis) {
        binv = fresh;
        (q, _) = recompute(&binv, &basis);
    }
    let r = x * &q - y;
    let objective = l1(&r);
    Some(Vertex { q, objective, certified, pivots })
}

/// Smallest `‖Xᵀ g‖∞` over subgradients `g ∈ ∂‖X q − y‖₁`, with residuals of
/// magnitude at most `zero_tol` treated as free coordinates in `[-1, 1]`.
pub fn lad_subgradient_gap(x: &DMatrix<f64>, y: &[f64], q: &[f64], zero_tol: f64) -> f64 {
    let m = x.nrows();
    let r = x * DVector::from_column_slice(q) - DVector::from_column_slice(y);
    let free: Vec<usize> = (0..m).filter(|&j| r[j].abs() <= zero_tol).collect();
    let g_fixed = DVector::from_iterator(m, (0..m).map(|j| if r[j].abs() <= zero_tol { 0.0 } else { r[j].signum() }));
    let base = x.tr_mul(&g_fixed);
    if free.is_empty() {
        return inf_norm(&base);
    }
    let mut xf = DMatrix::zeros(free.len(), x.ncols());
    for (k, &j) in free.iter().enumerate() {
        xf.set_row(k, &x.row(j));
    }
    let mut g = lstsq(&xf.transpose(), &(-&base)).map(|v| v.clamp(-1.0, 1.0));
    let mut res = &base + xf.tr_mul(&g);
    let mut best = inf_norm(&res);
    // Coordinate descent on ½‖base + X_fᵀ g‖² over the box |g| ≤ 1.
    let norms: Vec<f64> = (0..free.len()).map(|k| xf.row(k).norm_squared()).collect();
    let floor = 1e-14 * inf_norm(&base).max(1e-300);
    for _ in 0..GAP_SWEEPS {
        if best <= floor {
            break;
        }
        let mut moved = false;
        for k in 0..free.len() {
            if norms[k] == 0.0 {
                continue;
            }
            let row = xf.row(k);
            let step = (row * &res)[0] / norms[k];
            let next = (g[k] - step).clamp(-1.0, 1.0);
            let delta = next - g[k];
            if delta != 0.0 {
                g[k] = next;
                res += row.transpose() * delta;
                moved = true;
            }
        }
        best = best.min(inf_norm(&res));
        if !moved {
            break;
        }
    }
    best
}

const GAP_SWEEPS: usize = 5000;

/// The stacked LAD form `[D₋ᵢ; λI] w ≈ [−dᵢ; 0]` of the sparse-representation
/// program with `zᵢ = 1` eliminated.
fn stacked_design(d: &DMatrix<f64>, col: usize, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (n1, n2) = d.shape();
    let p = n2 - 1;
    let mut x = DMatrix::zeros(n1 + p, p);
    let mut k = 0;
    for j in 0..n2 {
        if j == col {
            continue;
        }
        x.view_mut((0, k), (n1, 1)).copy_from(&d.column(j));
        x[(n1 + k, k)] = lambda;
        k += 1;
    }
    let mut y = DVector::zeros(n1 + p);
    for i in 0..n1 {
        y[i] = -d[(i, col)];
    }
    (x, y)
}

fn embed(w: &[f64], col: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(w.len() + 1);
    z.extend_from_slice(&w[..col]);
    z.push(1.0);
    z.extend_from_slice(&w[col..]);
    z
}

/// Minimize `‖D z‖₁ + λ‖z₋ᵢ‖₁` subject to `zᵢ = 1`.
///
/// Solved to optimality: by the revised simplex when `D` is wide, otherwise by
/// vertex descent on the stacked LAD form. `iterations` counts simplex pivots.
pub fn sparse_rep_solve(d: &DenseMatrix, col_index: usize, lambda: f64, cfg: &SolverConfig) -> Result<SolveOutcome> {
    sparse_rep_matrix(d.as_matrix(), col_index, lambda, cfg)
}

const SIMPLEX_MAX_COLS: usize = 16;

pub(crate) fn sparse_rep_matrix(d: &DMatrix<f64>, col: usize, lambda: f64, cfg: &SolverConfig) -> Result<SolveOutcome> {
    let n2 = d.ncols();
    if col >= n2 {
        return invalid(format!("column index {col} out of range for {n2} columns"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid("lambda must be positive");
    }
    cfg.validate()?;
    if n2 == 1 {
        return Ok(SolveOutcome {
            solution: vec![1.0],
            objective: d.column(0).iter().map(|x| x.abs()).sum(),
            iterations: 0,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
        });
    }
    let n1 = d.nrows();
    let max_pivots = 50 * (n1 + n2) + 1000;
    let (z, pivots, optimal) = if n1 < n2 || n2 <= SIMPLEX_MAX_COLS {
        let b: Vec<f64> = d.column(col).iter().map(|v| -v).collect();
        let sol = penalized_lad(d, &b, lambda, Some(col), max_pivots);
        let mut z = sol.x;
        z[col] = 1.0;
        (z, sol.pivots, sol.optimal)
    } else {
        let (x, y) = stacked_design(d, col, lambda);
        let v = vertex_refine(&x, &y, &DVector::zeros(n2 - 1))
            .ok_or_else(|| LscError::Degenerate("stacked design lost full column rank".into()))?;
        (embed(v.q.as_slice(), col), v.pivots, v.certified)
    };
    let objective = sparse_rep_objective(d, col, lambda, &z);
    Ok(SolveOutcome { solution: z, objective, iterations: pivots, converged: optimal, primal_residual: 0.0, dual_residual: 0.0 })
}

/// Objective of the sparse-representation program at a feasible `z`.
pub fn sparse_rep_objective(d: &DMatrix<f64>, col: usize, lambda: f64, z: &[f64]) -> f64 {
    let dz = d * DVector::from_column_slice(z);
    let pen: f64 = z.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, v)| v.abs()).sum();
    l1(&dz) + lambda * pen
}

/// Batched sparse-representation solves sharing one factorization of `DᵀD + λ²I`.
///
/// Each target column is solved as its own ADMM instance; the matrix products of
/// all live instances are fused. Converged columns are retired at residual
/// checks. A final support-restricted least-squares step sharpens each answer.
pub(crate) struct SparseRepBatch<'a> {
    d: &'a DMatrix<f64>,
    lambda: f64,
    v: DMatrix<f64>,
    shrink_weights: DVector<f64>,
    cfg: SolverConfig,
    scale: f64,
}

impl<'a> SparseRepBatch<'a> {
    pub fn new(d: &'a DMatrix<f64>, lambda: f64, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid("lambda must be positive");
        }
        let (_, sigma, v) = svd_full(d);
        let k = sigma.len();
        let v = v.columns(0, k).into_owned();
        let shrink_weights = DVector::from_iterator(k, sigma.iter().map(|s| s * s / (s * s + lambda * lambda)));
        let (n1, n2) = d.shape();
        let scale = (d.norm_squared() / (n1 * n2) as f64).sqrt().max(1e-300);
        Ok(SparseRepBatch { d, lambda, v, shrink_weights, cfg: cfg.clone(), scale })
    }

    /// `(DᵀD + λ²I)⁻¹ C`.
    fn apply_ginv(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = self.v.tr_mul(c);
        for (i, w) in self.shrink_weights.iter().enumerate() {
            t.row_mut(i).scale_mut(*w);
        }
        (c - &self.v * t) / (self.lambda * self.lambda)
    }

    pub fn solve(&self, targets: &[usize]) -> Vec<SolveOutcome> {
        let d = self.d;
        let (n1, n2) = d.shape();
        let m = targets.len();
        let lam = self.lambda;
        let cfg = &self.cfg;
        let alpha = cfg.over_relaxation;
        let mut results: Vec<Option<SolveOutcome>> = vec![None; m];
        if m == 0 {
            return Vec::new();
        }

        let mut e = DMatrix::zeros(n2, m);
        for (j, &t) in targets.iter().enumerate() {
            e[(t, j)] = 1.0;
        }
        let mut ge = self.apply_ginv(&e);
        let mut live: Vec<usize> = (0..m).collect();
        let mut tgt: Vec<usize> = targets.to_vec();
        let mut r1 = DMatrix::zeros(n1, m);
        let mut r2 = DMatrix::zeros(n2, m);
        let mut u1 = DMatrix::zeros(n1, m);
        let mut u2 = DMatrix::zeros(n2, m);
        let mut rho = vec![cfg.admm_rho / self.scale; m];
        for (j, &t) in tgt.iter().enumerate() {
            r2[(t, j)] = lam;
        }

        let mut iter = 0;
        while !live.is_empty() {
            iter += 1;
            let a = &r1 - &u1;
            let b = &r2 - &u2;
            let c = d.tr_mul(&a) + &b * lam;
            let mut zt = self.apply_ginv(&c);
            for (j, &t) in tgt.iter().enumerate() {
                let mu = (1.0 - zt[(t, j)]) / ge[(t, j)];
                zt.column_mut(j).axpy(mu, &ge.column(j), 1.0);
                zt[(t, j)] = 1.0;
            }
            let z = zt;
            let dz = d * &z;
            let lz = &z * lam;
            let hat1 = &dz * alpha + &r1 * (1.0 - alpha);
            let hat2 = &lz * alpha + &r2 * (1.0 - alpha);
            let check = iter % CHECK_EVERY == 0 || iter >= cfg.max_iters;
            let (r1_old, r2_old) = if check { (Some(r1.clone()), Some(r2.clone())) } else { (None, None) };
            r1 = &hat1 + &u1;
            r2 = &hat2 + &u2;
            for j in 0..live.len() {
                let tau = 1.0 / rho[j];
                r1.column_mut(j).apply(|v| *v = soft(*v, tau));
                r2.column_mut(j).apply(|v| *v = soft(*v, tau));
                r2[(tgt[j], j)] = lam;
            }
            u1 += &hat1 - &r1;
            u2 += &hat2 - &r2;
            for (j, &t) in tgt.iter().enumerate() {
                u2[(t, j)] = 0.0;
            }
            if !check {
                continue;
            }
            let (r1_old, r2_old) = (r1_old.unwrap(), r2_old.unwrap());
            let dual_vec = d.tr_mul(&(&r1 - &r1_old)) + (&r2 - &r2_old) * lam;
            let dual_base = d.tr_mul(&u1) + &u2 * lam;
            let mut keep = Vec::with_capacity(live.len());
            for j in 0..live.len() {
                let t = tgt[j];
                let p1 = (dz.column(j) - r1.column(j)).norm_squared();
                let mut p2 = (lz.column(j) - r2.column(j)).norm_squared();
                p2 -= (lz[(t, j)] - r2[(t, j)]).powi(2);
                let primal = (p1 + p2).sqrt();
                let dual = rho[j] * dual_vec.column(j).norm();
                let ax = (dz.column(j).norm_squared() + lz.column(j).norm_squared()).sqrt();
                let rx = (r1.column(j).norm_squared() + r2.column(j).norm_squared()).sqrt();
                let eps_pri = ((n1 + n2) as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * ax.max(rx);
                let eps_dual = (n2 as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * rho[j] * dual_base.column(j).norm();
                let done = primal <= eps_pri && dual <= eps_dual;
                if done || iter >= cfg.max_iters {
                    let zj: Vec<f64> = z.column(j).iter().copied().collect();
                    let r1j: Vec<f64> = r1.column(j).iter().copied().collect();
                    let r2j: Vec<f64> = r2.column(j).iter().copied().collect();
                    let sol = self.polish(t, zj, &r1j, &r2j);
                    let objective = sparse_rep_objective(d, t, lam, &sol);
                    results[live[j]] = Some(SolveOutcome {
                        solution: sol,
                        objective,
                        iterations: iter,
                        converged: done,
                        primal_residual: primal,
                        dual_residual: dual,
                    });
                } else {
                    if primal > BALANCE_RATIO * dual {
                        rho[j] *= BALANCE_FACTOR;
                        u1.column_mut(j).unscale_mut(BALANCE_FACTOR);
                        u2.column_mut(j).unscale_mut(BALANCE_FACTOR);
                    } else if dual > BALANCE_RATIO * primal {
                        rho[j] /= BALANCE_FACTOR;
                        u1.column_mut(j).scale_mut(BALANCE_FACTOR);
                        u2.column_mut(j).scale_mut(BALANCE_FACTOR);
                    }
                    keep.push(j);
                }
            }
            if keep.len() < live.len() {
                let gather = |mat: &DMatrix<f64>| mat.select_columns(keep.iter());
                r1 = gather(&r1);
                r2 = gather(&r2);
                u1 = gather(&u1);
                u2 = gather(&u2);
                ge = gather(&ge);
                rho = keep.iter().map(|&j| rho[j]).collect();
                tgt = keep.iter().map(|&j| tgt[j]).collect();
                live = keep.iter().map(|&j| live[j]).collect();
            }
        }
        results.into_iter().map(|r| r.expect("every column retires")).collect()
    }

    /// Least squares on the ADMM support: keep `w` on the shrink-active
    /// coordinates and fit the rows the shrink step zeroed exactly.
    fn polish(&self, t: usize, z: Vec<f64>, r1: &[f64], r2: &[f64]) -> Vec<f64> {
        let d = self.d;
        let n1 = d.nrows();
        let support: Vec<usize> = (0..d.ncols()).filter(|&j| j != t && r2[j] != 0.0).collect();
        let rows: Vec<usize> = (0..n1).filter(|&i| r1[i] == 0.0).collect();
        if support.is_empty() || rows.len() < support.len() {
            return z;
        }
        let a = DMatrix::from_fn(rows.len(), support.len(), |i, k| d[(rows[i], support[k])]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| -d[(i, t)]));
        let w = lstsq(&a, &b);
        let mut cand = vec![0.0; d.ncols()];
        cand[t] = 1.0;
        for (k, &j) in support.iter().enumerate() {
            cand[j] = w[k];
        }
        if sparse_rep_objective(d, t, self.lambda, &cand) < sparse_rep_objective(d, t, self.lambda, &z) {
            cand
        } else {
            z
        }
    }
}

/// Minimize `‖S z‖₁` subject to `B z = 0` and `vᵀ z = 1`.
pub fn oracle_solve(b: &DenseMatrix, s: &DenseMatrix, v: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    oracle_matrix(b.as_matrix(), s.as_matrix(), v, cfg)
}

pub(crate) fn null_basis(b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, n) = b.shape();
    let (_, sigma, v) = if m < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, m).copy_from(b);
        svd_full(&padded)
    } else {
        svd_full(b)
    };
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count();
    v.columns(rank, n - rank).into_owned()
}

const ORACLE_TIE_BREAK: f64 = 1e-6;

pub(crate) fn oracle_matrix(b: &DMatrix<f64>, s: &DMatrix<f64>, v: &[f64], cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let n = b.ncols();
    if s.shape() != b.shape() {
        return invalid("B and S must have the same shape");
    }
    if v.len() != n {
        return invalid(format!("v has length {} but B has {} columns", v.len(), n));
    }
    let v = DVector::from_column_slice(v);
    let vnorm = v.norm();
    if !(vnorm > 0.0) {
        return Err(LscError::Infeasible("v is zero, so v'z = 1 has no solution".into()));
    }
    let nb = null_basis(b, 1e-10);
    let coef = nb.tr_mul(&v);
    let pnorm = coef.norm();
    if nb.ncols() == 0 || pnorm <= 1e-10 * vnorm {
        return Err(LscError::Infeasible(
            "v is orthogonal to null(B); the oracle feasible set is empty".into(),
        ));
    }
    let z0 = &nb * (&coef / (pnorm * pnorm));
    // Directions inside null(B) orthogonal to v.
    let k = nb.ncols();
    let mut h = DMatrix::identity(k, k);
    let unit = &coef / pnorm;
    h -= &unit * unit.transpose();
    let (hu, hs, _) = svd_full(&h);
    let keep = hs.iter().filter(|&&x| x > 0.5).count();
    let n_aff = &nb * hu.columns(0, keep);
    let y0 = -(s * &z0);
    let finish = |t: DVector<f64>, iterations, converged, primal, dual| {
        let z = &z0 + &n_aff * t;
        let objective = l1(&(s * &z));
        SolveOutcome {
            solution: z.iter().copied().collect(),
            objective,
            iterations,
            converged,
            primal_residual: primal,
            dual_residual: dual,
        }
    };
    if keep == 0 {
        return Ok(finish(DVector::zeros(0), 0, true, 0.0, 0.0));
    }
    // Ties between optimal points go to the smallest ‖z‖₁.
    let smax = s.amax();
    let eta = ORACLE_TIE_BREAK * if smax > 0.0 { smax } else { 1.0 };
    let n1 = s.nrows();
    let mut x = DMatrix::zeros(n1 + n, keep);
    x.rows_mut(0, n1).copy_from(&(s * &n_aff));
    x.rows_mut(n1, n).copy_from(&(&n_aff * eta));
    let mut y = DVector::zeros(n1 + n);
    y.rows_mut(0, n1).copy_from(&y0);
    y.rows_mut(n1, n).copy_from(&(&z0 * -eta));
    if keep <= SIMPLEX_MAX_COLS {
        let sol = penalized_lad(&x, y.as_slice(), 0.0, None, 50 * (n1 + n + keep) + 1000);
        let t = DVector::from_vec(sol.x);
        return Ok(finish(t, sol.pivots, sol.optimal, 0.0, 0.0));
    }
    let out = LadSolver::new(&x, cfg)?.solve(y.as_slice())?;
    let t = DVector::from_vec(out.solution);
    Ok(finish(t, out.iterations, out.converged, out.primal_residual, out.dual_residual))
}

/// Exhaustive minimizer of `‖A₋ᵢ z − aᵢ‖₀` for tiny inputs.
///
/// Returns the coefficient vector over the columns of `A₋ᵢ` and the number of
/// non-zero residual entries. Among minimizers the lexicographically smallest
/// zero pattern wins.
pub fn l0_bruteforce(a: &DenseMatrix, col_index: usize, max_n1: usize, max_cols: usize) -> Result<(Vec<f64>, usize)> {
    let a = a.as_matrix();
    let (n1, n) = a.shape();
    if col_index >= n {
        return invalid(format!("column index {col_index} out of range for {n} columns"));
    }
    if n1 > max_n1 || n > max_cols {
        return invalid(format!(
            "l0 brute force refuses {n1} x {n} inputs (caps {max_n1} rows, {max_cols} columns)"
        ));
    }
    let rest: Vec<usize> = (0..n).filter(|&j| j != col_index).collect();
    let target = a.column(col_index).into_owned();
    let nnz = |v: &DVector<f64>| v.iter().filter(|x| x.abs() > 1e-9).count();
    if rest.is_empty() {
        return Ok((Vec::new(), nnz(&target)));
    }
    let a_rest = a.select_columns(rest.iter());
    let tol = 1e-9 * (1.0 + a.amax());
    let mut best: Option<(usize, Vec<bool>, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << n1) {
        let rows: Vec<usize> = (0..n1).filter(|&i| mask >> i & 1 == 1).collect();
        let z = if rows.is_empty() {
            DVector::zeros(rest.len())
        } else {
            let sub = a_rest.select_rows(rows.iter());
            let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| target[i]));
            let z = lstsq(&sub, &rhs);
            if (&sub * &z - rhs).amax() > tol {
                continue;
            }
            z
        };
        let resid = &a_rest * &z - &target;
        let pattern: Vec<bool> = resid.iter().map(|x| x.abs() <= tol).collect();
        let zeros = pattern.iter().filter(|&&p| p).count();
        let better = match &best {
            None => true,
            Some((bz, bp, _)) => zeros > *bz || (zeros == *bz && zero_pattern_less(&pattern, bp)),
        };
        if better {
            best = Some((zeros, pattern, z));
        }
    }
    let (zeros, _, z) = best.expect("the empty row subset is always consistent");
    Ok((z.iter().copied().collect(), n1 - zeros))
}

/// Compares zero patterns as sorted index lists.
fn zero_pattern_less(a: &[bool], b: &[bool]) -> bool {
    let ia = a.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i);
    let ib = b.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i);
    ia.lt(ib)
}
