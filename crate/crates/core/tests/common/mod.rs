#![allow(dead_code)]

use lsc_core::l1_solvers::{l0_bruteforce, sparse_rep_solve, SolverConfig};
use lsc_core::mat_core::DenseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(m, n, |_, _| r.sample(StandardNormal))
}

pub fn dense(m: DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_matrix(m).unwrap()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Minimum of `‖X q − y‖₁` over all points interpolating `p` rows.
pub fn lad_by_enumeration(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let p = x.ncols();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for rows in combinations(x.nrows(), p) {
        let sub = x.select_rows(rows.iter());
        let rhs = DVector::from_iterator(p, rows.iter().map(|&i| y[i]));
        let Some(q) = sub.lu().solve(&rhs) else { continue };
        let obj = (x * &q - y).abs().sum();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((q, obj));
        }
    }
    best.expect("some interpolating subset is non-singular")
}

/// `X q⋆ + e` with `X` Gaussian `m × p` and `e` holding `k` entries of magnitude `amp`.
pub fn corrupted_regression(m: usize, p: usize, k: usize, amp: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let x = gaussian(m, p, seed);
    let q = DVector::from_column_slice(gaussian(p, 1, seed ^ 0xabc).as_slice());
    let mut y = &x * &q;
    let mut r = rng(seed ^ 0x5151);
    let mut picked = Vec::new();
    while picked.len() < k {
        let i = r.random_range(0..m);
        if !picked.contains(&i) {
            picked.push(i);
            y[i] += if r.random_bool(0.5) { amp } else { -amp };
        }
    }
    (x, y, q)
}

/// A rank-`r` `n1 × n` matrix plus `corruptions` unit-scale entries in column 0.
pub fn tiny_l0_instance(n1: usize, n: usize, r: usize, corruptions: usize, seed: u64) -> DenseMatrix {
    let b = gaussian(n1, r, seed) * gaussian(r, n, seed + 1);
    let mut a = b;
    let mut g = rng(seed ^ 0x77);
    let mut rows = Vec::new();
    while rows.len() < corruptions {
        let i = g.random_range(0..n1);
        if !rows.contains(&i) {
            rows.push(i);
            let mag: f64 = g.random_range(1.0..3.0);
            a[(i, 0)] += if g.random_bool(0.5) { mag } else { -mag };
        }
    }
    dense(a)
}

/// Whether the ℓ1 residual support at `λ = 1e-6` equals the ℓ0 optimum's.
pub fn l1_matches_l0(a: &DenseMatrix, col: usize) -> bool {
    let sol = sparse_rep_solve(a, col, 1e-6, &SolverConfig::default()).unwrap();
    let z = DVector::from_vec(sol.solution);
    let r1 = a.as_matrix() * z;
    let (w, _) = l0_bruteforce(a, col, 14, 6).unwrap();
    let m = a.as_matrix();
    let rest: Vec<usize> = (0..m.ncols()).filter(|&j| j != col).collect();
    let r0 = m.select_columns(rest.iter()) * DVector::from_vec(w) - m.column(col);
    let tol = 1e-6 * m.column(col).amax().max(1.0);
    support(r1.as_slice(), tol) == support(r0.as_slice(), tol)
}

pub fn support(r: &[f64], tol: f64) -> Vec<usize> {
    (0..r.len()).filter(|&i| r[i].abs() > tol).collect()
}
