//! Numerical checks of the sufficient conditions under which the ℓ1
//! sparse-representation program recovers the oracle solution.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};
use crate::l1_solvers::{oracle_matrix, SolverConfig};
use crate::mat_core::{numerical_rank, svd_full, DenseMatrix};
use crate::synth::{mix64, rng_from, sample_unit_sphere};

/// Relative singular-value cut used for the rank of `B`.
const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSets {
    /// Rows of `S` that are zero.
    pub zero_row_set: Vec<usize>,
    /// Rows of `S` orthogonal to `z`.
    pub z_orthogonal_set: Vec<usize>,
    /// Number of non-zero rows.
    pub n_s: usize,
    /// Number of non-zero rows orthogonal to `z`.
    pub n_s_prime: usize,
}

impl SupportSets {
    /// Non-zero rows orthogonal to `z`.
    pub fn orthogonal_nonzero(&self) -> Vec<usize> {
        self.z_orthogonal_set.iter().copied().filter(|k| self.zero_row_set.binary_search(k).is_err()).collect()
    }
}

pub fn support_sets(s: &DenseMatrix, z: &[f64], zero_tol: f64) -> Result<SupportSets> {
    support_sets_matrix(s.as_matrix(), z, zero_tol)
}

fn support_sets_matrix(s: &DMatrix<f64>, z: &[f64], zero_tol: f64) -> Result<SupportSets> {
    if z.len() != s.ncols() {
        return invalid(format!("z has length {} but S has {} columns", z.len(), s.ncols()));
    }
    let zv = DVector::from_column_slice(z);
    let znorm = zv.norm();
    let mut zero_row_set = Vec::new();
    let mut z_orthogonal_set = Vec::new();
    for k in 0..s.nrows() {
        let row = s.row(k);
        if row.amax() <= zero_tol {
            zero_row_set.push(k);
            z_orthogonal_set.push(k);
        } else if (row * &zv)[0].abs() <= zero_tol * row.norm() * znorm {
            z_orthogonal_set.push(k);
        }
    }
    let n_s = s.nrows() - zero_row_set.len();
    let n_s_prime = z_orthogonal_set.len() - zero_row_set.len();
    Ok(SupportSets { zero_row_set, z_orthogonal_set, n_s, n_s_prime })
}

/// `√(2/π)·n/√r − 2√n − t·√(n/(r−1))`.
pub fn permeance_lower_bound(n: usize, r: usize, t: f64) -> Result<f64> {
    if r < 2 {
        return Err(LscError::UnsupportedRegime(format!("the permeance bound needs r >= 2, got {r}")));
    }
    if !(t >= 0.0) {
        return invalid(format!("t must be non-negative, got {t}"));
    }
    let n = n as f64;
    let r = r as f64;
    Ok((2.0 / PI).sqrt() * n / r.sqrt() - 2.0 * n.sqrt() - t * (n / (r - 1.0)).sqrt())
}

/// Probability that the permeance bound fails: `exp(−t²/2)`.
pub fn permeance_failure_probability(t: f64) -> f64 {
    (-t * t / 2.0).exp()
}

/// Tail bound `exp(−(r/2)(t² − ln t² − 1))` on `‖Σ hᵢ gᵢ‖ ≥ ‖h‖ t` for unit-sphere `gᵢ`, `t > 1`.
pub fn sphere_sum_tail(r: usize, t: f64) -> Result<f64> {
    if !(t > 1.0) {
        return invalid(format!("the tail bound needs t > 1, got {t}"));
    }
    let t2 = t * t;
    Ok((-(r as f64) / 2.0 * (t2 - t2.ln() - 1.0)).exp())
}

/// `ξ` for `n1 − n_s` clean rows in an `r_b`-dimensional row space.
pub fn xi_bound(n1: usize, n_s: usize, r_b: usize, t1: f64) -> Result<f64> {
    if n_s > n1 {
        return invalid(format!("n_s = {n_s} exceeds N1 = {n1}"));
    }
    permeance_lower_bound(n1 - n_s, r_b, t1)
}

/// `Σᵢ sgn(sᵢᵀz)·aᵢ` over the rows, with `sgn(0) = 0`.
pub fn alpha_vector(a: &DenseMatrix, s: &DenseMatrix, z_star: &[f64]) -> Result<Vec<f64>> {
    alpha_matrix(a.as_matrix(), s.as_matrix(), z_star)
}

fn alpha_matrix(a: &DMatrix<f64>, s: &DMatrix<f64>, z: &[f64]) -> Result<Vec<f64>> {
    if a.shape() != s.shape() {
        return invalid("A and S must have the same shape");
    }
    if z.len() != s.ncols() {
        return invalid(format!("z has length {} but S has {} columns", z.len(), s.ncols()));
    }
    let zv = DVector::from_column_slice(z);
    let proj = s * zv;
    let signs = proj.map(|p| if p > 0.0 { 1.0 } else if p < 0.0 { -1.0 } else { 0.0 });
    Ok(a.tr_mul(&signs).iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfimumMethod {
    /// Exact minimization, available when the row space has dimension at most two.
    ExactLowdim,
    /// Best of sampled directions refined by local search; an upper estimate.
    Sampled,
    /// Replaced by the probabilistic permeance bound.
    ProbabilisticBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Permeance term: `ξ` for the lemma, the infimum over clean rows for the theorem.
    pub xi: f64,
    pub lhs_first: f64,
    pub rhs_first: f64,
    pub lhs_second: f64,
    pub rhs_second: f64,
    /// `‖vᵀP_b‖ / ‖vᵀR_b‖`.
    pub coherence_ratio: f64,
    pub alpha_norm: f64,
    /// Largest magnitude in `S`.
    pub kappa: f64,
    pub rank_b: usize,
    pub n_s: usize,
    pub n_s_prime: usize,
    pub holds: bool,
    pub infimum_method: InfimumMethod,
    /// Set when `holds` rests on a sampled infimum.
    pub certified_up_to_sampling: bool,
    /// Lower bound on the probability that the lemma's conclusion holds.
    pub probability_bound: Option<f64>,
    /// The oracle solution the conditions were evaluated at.
    pub z_star: Vec<f64>,
}

/// Orthonormal bases `(R_b, P_b)` of the row space and null space of `B`.
fn row_and_null_bases(b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let (m, n) = b.shape();
    let (_, sigma, v) = if m < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, m).copy_from(b);
        svd_full(&padded)
    } else {
        svd_full(b)
    };
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().filter(|&&s| s > RANK_TOL * smax && s > 0.0).count();
    (v.columns(0, rank).into_owned(), v.columns(rank, n - rank).into_owned(), rank)
}

fn row_norm_sum(s: &DMatrix<f64>, rows: &[usize]) -> f64 {
    rows.iter().map(|&k| s.row(k).norm()).sum()
}

/// `f(c) = Σ wᵢ |gᵢᵀc|` for rows `gᵢ` of `g`.
struct WeightedAbs {
    g: DMatrix<f64>,
    w: Vec<f64>,
}

impl WeightedAbs {
    fn eval(&self, c: &DVector<f64>) -> f64 {
        (&self.g * c).iter().zip(&self.w).map(|(p, w)| w * p.abs()).sum()
    }

    fn eval_slice(&self, c: &[f64]) -> f64 {
        self.eval(&DVector::from_column_slice(c))
    }

    /// Exact minimum over the unit circle (or the two points `±1` in one dimension).
    fn exact_min(&self) -> f64 {
        match self.g.ncols() {
            0 => 0.0,
            1 => self.eval_slice(&[1.0]),
            2 => {
                // Between consecutive kinks f is a sinusoid, so its minimum on each
                // arc sits at a kink or at the sinusoid's trough.
                let mut kinks: Vec<f64> = (0..self.g.nrows())
                    .filter(|&i| self.g.row(i).norm() > 0.0)
                    .map(|i| (self.g[(i, 1)].atan2(self.g[(i, 0)]) + PI / 2.0).rem_euclid(PI))
                    .collect();
                kinks.sort_by(f64::total_cmp);
                kinks.dedup();
                let at = |th: f64| self.eval_slice(&[th.cos(), th.sin()]);
                if kinks.is_empty() {
                    return at(0.0);
                }
                let mut best = f64::INFINITY;
                for k in 0..kinks.len() {
                    let lo = kinks[k];
                    let hi = if k + 1 < kinks.len() { kinks[k + 1] } else { kinks[0] + PI };
                    best = best.min(at(lo));
                    let mid = 0.5 * (lo + hi);
                    let (cm, sm) = (mid.cos(), mid.sin());
                    let (mut a, mut b) = (0.0, 0.0);
                    for i in 0..self.g.nrows() {
                        let sign = (self.g[(i, 0)] * cm + self.g[(i, 1)] * sm).signum();
                        a += self.w[i] * sign * self.g[(i, 0)];
                        b += self.w[i] * sign * self.g[(i, 1)];
                    }
                    let trough = (b.atan2(a) + PI).rem_euclid(2.0 * PI);
                    for shift in [-2.0 * PI, 0.0, 2.0 * PI] {
                        let th = trough + shift;
                        if th > lo && th < hi {
                            best = best.min(at(th));
                        }
                    }
                }
                best
            }
            _ => unreachable!("exact minimization is limited to dimension two"),
        }
    }

    /// Best of `num_dirs` sampled unit directions, polished by random-perturbation descent.
    fn sampled_min(&self, num_dirs: usize, seed: u64) -> f64 {
        let dim = self.g.ncols();
        let starts: Vec<(f64, Vec<f64>)> = (0..num_dirs)
            .into_par_iter()
            .map(|k| {
                let c = sample_unit_sphere(dim, &mut rng_from(mix64(seed, k as u64)));
                (self.eval_slice(&c), c)
            })
            .collect();
        let mut ranked: Vec<usize> = (0..starts.len()).collect();
        ranked.sort_by(|&a, &b| starts[a].0.total_cmp(&starts[b].0).then(a.cmp(&b)));
        let polished: Vec<f64> = ranked
            .iter()
            .take(8)
            .map(|&k| self.descend(&starts[k].1, mix64(seed ^ 0xa5a5, k as u64)))
            .collect();
        polished.into_iter().fold(starts[ranked[0]].0, f64::min)
    }

    fn descend(&self, start: &[f64], seed: u64) -> f64 {
        let dim = start.len();
        let mut rng = rng_from(seed);
        let mut c = DVector::from_column_slice(start);
        let mut best = self.eval(&c);
        let mut step = 0.1;
        while step > 1e-9 {
            let mut improved = false;
            for _ in 0..4 * dim {
                let dir = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                let mut trial: DVector<f64> = &c + dir * step;
                trial.unscale_mut(trial.norm());
                let val = self.eval(&trial);
                if val < best {
                    best = val;
                    c = trial;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }

    fn minimize(&self, num_dirs: usize, seed: u64) -> (f64, InfimumMethod) {
        if self.g.ncols() <= 2 {
            (self.exact_min(), InfimumMethod::ExactLowdim)
        } else {
            (self.sampled_min(num_dirs.max(1), seed), InfimumMethod::Sampled)
        }
    }
}

/// Evaluates the deterministic sufficient conditions for the ℓ1 program
/// `min ‖(B + S) z‖₁ s.t. vᵀz = 1` to return `z_star`.
pub fn theorem2_conditions(
    b: &DenseMatrix,
    s: &DenseMatrix,
    v: &[f64],
    z_star: &[f64],
    num_dirs: usize,
    seed: u64,
) -> Result<ConditionReport> {
    let (b, s) = (b.as_matrix(), s.as_matrix());
    if b.shape() != s.shape() {
        return invalid("B and S must have the same shape");
    }
    let n = b.ncols();
    if v.len() != n || z_star.len() != n {
        return invalid(format!("v and z_star must have length {n}"));
    }
    let vv = DVector::from_column_slice(v);
    let zv = DVector::from_column_slice(z_star);
    let (r_b, p_b, rank_b) = row_and_null_bases(b);
    let v_null = (p_b.tr_mul(&vv)).norm();
    if v_null <= 1e-10 * vv.norm() {
        return Err(LscError::Infeasible("v is orthogonal to the null space of B".into()));
    }
    let scale = b.norm() * zv.norm() + f64::MIN_POSITIVE;
    if (b * &zv).norm() > 1e-6 * scale || (vv.dot(&zv) - 1.0).abs() > 1e-6 {
        return invalid("z_star is not feasible for B z = 0, vᵀz = 1");
    }
    let sets = support_sets_matrix(s, z_star, 1e-9)?;
    let clean = &sets.zero_row_set;
    let ortho_dirty = sets.orthogonal_nonzero();
    let a = b + s;
    let alpha = DVector::from_vec(alpha_matrix(&a, s, z_star)?);
    let alpha_norm = alpha.norm();
    let rhs = row_norm_sum(s, &ortho_dirty) + alpha_norm;

    // Row coordinates in the row space of B: bᵢᵀδ = (bᵢ R_b)·c for δ = R_b c.
    let coords = b * &r_b;
    let pick = |rows: &[usize]| coords.select_rows(rows);
    let mut rows1 = clean.clone();
    rows1.extend(&ortho_dirty);
    let mut w1 = vec![1.0; clean.len()];
    w1.extend(std::iter::repeat_n(-2.0, ortho_dirty.len()));
    let f1 = WeightedAbs { g: pick(&rows1), w: w1 };
    let f2 = WeightedAbs { g: pick(clean), w: vec![1.0; clean.len()] };
    let (inf1, method) = f1.minimize(num_dirs, seed);
    let (inf2, _) = f2.minimize(num_dirs, mix64(seed, 1));

    let v_row = r_b.tr_mul(&vv).norm();
    let coherence_ratio = if v_row > 0.0 { v_null / v_row } else { f64::INFINITY };
    let lhs_first = 0.5 * inf1;
    let lhs_second = if v_row > 0.0 { coherence_ratio / 2.0 * inf2 } else { f64::INFINITY };
    let holds = lhs_first > rhs && lhs_second > rhs;
    Ok(ConditionReport {
        xi: inf2,
        lhs_first,
        rhs_first: rhs,
        lhs_second,
        rhs_second: rhs,
        coherence_ratio,
        alpha_norm,
        kappa: s.amax(),
        rank_b,
        n_s: sets.n_s,
        n_s_prime: sets.n_s_prime,
        holds,
        infimum_method: method,
        certified_up_to_sampling: holds && method == InfimumMethod::Sampled,
        probability_bound: None,
        z_star: z_star.to_vec(),
    })
}

/// Evaluates the randomized-model sufficient conditions for column `col_index`
/// of `A = B + S` to be recovered by its oracle combination.
pub fn lemma1_conditions(b: &DenseMatrix, s: &DenseMatrix, col_index: usize, t1: f64, t2: f64) -> Result<ConditionReport> {
    if !(t1 >= 0.0) {
        return invalid(format!("t1 must be non-negative, got {t1}"));
    }
    if !(t2 > 1.0) {
        return invalid(format!("t2 must exceed 1, got {t2}"));
    }
    let (bm, sm) = (b.as_matrix(), s.as_matrix());
    if bm.shape() != sm.shape() {
        return invalid("B and S must have the same shape");
    }
    let (n1, n) = bm.shape();
    if col_index >= n {
        return invalid(format!("column index {col_index} out of range for {n} columns"));
    }
    let rank_b = numerical_rank(bm, RANK_TOL);
    if rank_b < 2 {
        return Err(LscError::UnsupportedRegime(format!("the lemma needs rank(B) >= 2, got {rank_b}")));
    }
    let mut e = vec![0.0; n];
    e[col_index] = 1.0;
    let oracle = oracle_matrix(bm, sm, &e, &SolverConfig::default())?;
    let z = oracle.solution;
    let sets = support_sets_matrix(sm, &z, 1e-9)?;
    let xi = xi_bound(n1, sets.n_s, rank_b, t1)?;
    let ortho_dirty = sets.orthogonal_nonzero();
    let spread = ((sets.n_s - sets.n_s_prime) as f64).sqrt() * t2;
    let rhs_second = row_norm_sum(sm, &ortho_dirty) + spread;
    let rhs_first = sets.n_s_prime as f64 + rhs_second;

    let (r_b, p_b, _) = row_and_null_bases(bm);
    let e_row = r_b.row(col_index).norm();
    let e_null = p_b.row(col_index).norm();
    let coherence_ratio = if e_row > 0.0 { e_null / e_row } else { f64::INFINITY };
    let lhs_first = 0.5 * xi;
    let lhs_second = if e_row > 0.0 { coherence_ratio / 2.0 * xi } else { f64::INFINITY };
    let a = bm + sm;
    let alpha_norm = DVector::from_vec(alpha_matrix(&a, sm, &z)?).norm();
    let probability = 1.0 - permeance_failure_probability(t1) - sphere_sum_tail(rank_b, t2)?;
    Ok(ConditionReport {
        xi,
        lhs_first,
        rhs_first,
        lhs_second,
        rhs_second,
        coherence_ratio,
        alpha_norm,
        kappa: sm.amax(),
        rank_b,
        n_s: sets.n_s,
        n_s_prime: sets.n_s_prime,
        holds: lhs_first > rhs_first && lhs_second > rhs_second,
        infimum_method: InfimumMethod::ProbabilisticBound,
        certified_up_to_sampling: false,
        probability_bound: Some(probability),
        z_star: z,
    })
}

/// `B` with rows uniform on the unit sphere of a random `r_b`-dimensional
/// subspace of `Rⁿ`, and a Bernoulli(`rho`) sparse `S` with entries uniform on `[−1, 1]`.
pub fn random_model_pair(n1: usize, n: usize, r_b: usize, rho: f64, seed: u64) -> Result<(DenseMatrix, DenseMatrix)> {
    if r_b == 0 || r_b > n {
        return invalid(format!("row-space dimension {r_b} must lie in 1..={n}"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return invalid(format!("rho must lie in [0, 1], got {rho}"));
    }
    let mut rng = rng_from(seed);
    let gauss = DMatrix::from_fn(n, r_b, |_, _| StandardNormal.sample(&mut rng));
    let basis: DMatrix<f64> = gauss.qr().q();
    let mut b = DMatrix::zeros(n1, n);
    for i in 0..n1 {
        let g = DVector::from_vec(sample_unit_sphere(r_b, &mut rng));
        b.set_row(i, &(&basis * g).transpose());
    }
    let s = DMatrix::from_fn(n1, n, |_, _| {
        let hit = rng.random::<f64>() < rho;
        let value = rng.random_range(-1.0..1.0);
        if hit { value } else { 0.0 }
    });
    Ok((DenseMatrix::from_matrix(b)?, DenseMatrix::from_matrix(s)?))
}
