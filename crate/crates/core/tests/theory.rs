mod common;

use common::*;
use lsc_core::l1_solvers::{oracle_solve, sparse_rep_solve, SolverConfig};
use lsc_core::mat_core::DenseMatrix;
use lsc_core::theory::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn unit_rows(m: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut g = gaussian(m, r, seed);
    for mut row in g.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    g
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn e(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn rank_one_theorem_report_matches_hand_computation() {
    let n1 = 6;
    let u = DVector::from_vec(vec![2.0, -1.0, 2.0]) / 3.0;
    let c = [1.0, -2.0, 0.5, 3.0, -1.5, 2.5];
    let b = DMatrix::from_fn(n1, 3, |i, j| c[i] * u[j]);
    let mut s = DMatrix::zeros(n1, 3);
    s[(2, 0)] = 0.8;
    s[(2, 1)] = -0.3;
    let (bd, sd) = (dense(b.clone()), dense(s.clone()));
    let v = e(3, 0);
    let z = oracle_solve(&bd, &sd, &v, &SolverConfig::default()).unwrap().solution;
    let rep = theorem2_conditions(&bd, &sd, &v, &z, 100, 0).unwrap();

    // The oracle can cancel the single dirty row, which then joins the orthogonal set.
    let zv = DVector::from_vec(z.clone());
    assert!((s.row(2) * &zv)[0].abs() < 1e-12);
    let clean_sum: f64 = (0..n1).filter(|&i| i != 2).map(|i| c[i].abs()).sum();
    let first = clean_sum - 2.0 * c[2].abs();
    let rhs = s.row(2).norm();
    assert_eq!(rep.rank_b, 1);
    assert_eq!((rep.n_s, rep.n_s_prime), (1, 1));
    assert_eq!(rep.infimum_method, InfimumMethod::ExactLowdim);
    assert_eq!(rep.alpha_norm, 0.0);
    assert!((rep.xi - clean_sum).abs() < 1e-10);
    assert!((rep.lhs_first - first / 2.0).abs() < 1e-10);
    assert!((rep.rhs_first - rhs).abs() < 1e-12);
    assert!((rep.rhs_second - rhs).abs() < 1e-12);
    let ratio = (1.0 - u[0] * u[0]).sqrt() / u[0].abs();
    assert!((rep.coherence_ratio - ratio).abs() < 1e-10);
    assert!((rep.lhs_second - ratio / 2.0 * clean_sum).abs() < 1e-9);
    assert_eq!(rep.holds, rep.lhs_first > rep.rhs_first && rep.lhs_second > rep.rhs_second);
    assert!(rep.holds);
    assert_eq!(rep.kappa, 0.8);
}

#[test]
fn bernoulli_support_counts_concentrate() {
    let (n1, n, rho) = (200, 10, 0.05_f64);
    let p = 1.0 - (1.0 - rho).powi(n as i32);
    let sd = (n1 as f64 * p * (1.0 - p)).sqrt();
    for seed in 0..5 {
        let (_, s) = random_model_pair(n1, n, 2, rho, seed).unwrap();
        let z: Vec<f64> = gaussian(n, 1, seed + 50).iter().copied().collect();
        let sets = support_sets(&s, &z, 1e-9).unwrap();
        assert!((sets.n_s as f64 - n1 as f64 * p).abs() <= 3.0 * sd, "seed {seed}: n_s {}", sets.n_s);
        assert_eq!(sets.n_s_prime, 0);
        assert!(sets.zero_row_set.iter().all(|i| sets.z_orthogonal_set.contains(i)));
    }
}

#[test]
fn xi_is_the_permeance_bound_on_clean_rows() {
    for (n1, n_s, r, t) in [(100, 0, 4, 0.0), (500, 0, 5, 2.0), (300, 40, 3, 1.25)] {
        assert_eq!(xi_bound(n1, n_s, r, t).unwrap(), permeance_lower_bound(n1 - n_s, r, t).unwrap());
    }
    let xs: Vec<f64> = [0.0, 0.5, 1.0, 3.0].iter().map(|&t| xi_bound(200, 10, 3, t).unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[1] < w[0]));
    assert!((permeance_lower_bound(4, 4, 0.0).unwrap() - ((2.0 / std::f64::consts::PI).sqrt() * 2.0 - 4.0)).abs() < 1e-12);
}

#[test]
fn permeance_bound_holds_with_the_stated_probability() {
    let (n, r, dirs, trials) = (500, 5, 10_000, 100);
    let bound = permeance_lower_bound(n, r, 2.0).unwrap();
    let deltas = unit_rows(dirs, r, 999).transpose();
    let mut above = 0;
    for trial in 0..trials {
        let g = unit_rows(n, r, 10_000 + trial);
        let sums = (&g * &deltas).abs().row_sum();
        if sums.min() > bound {
            above += 1;
        }
    }
    assert!(above as f64 >= 0.95 * trials as f64, "{above}/{trials} above {bound}");
}

#[test]
fn alpha_matches_an_explicit_loop() {
    // Small integers keep every sum exact, so both paths must agree bit for bit.
    let mut g = rng(4);
    let a = DMatrix::from_fn(80, 6, |_, _| g.random_range(-9..=9) as f64);
    let s = DMatrix::from_fn(80, 6, |_, _| if g.random_bool(0.1) { g.random_range(-3..=3) as f64 } else { 0.0 });
    let z: Vec<f64> = (0..6).map(|_| g.random_range(-5..=5) as f64).collect();
    let got = alpha_vector(&dense(a.clone()), &dense(s.clone()), &z).unwrap();
    let mut want = vec![0.0; 6];
    for i in 0..80 {
        let dot: f64 = (0..6).map(|j| s[(i, j)] * z[j]).sum();
        let sign = if dot > 0.0 { 1.0 } else if dot < 0.0 { -1.0 } else { 0.0 };
        for j in 0..6 {
            want[j] += sign * a[(i, j)];
        }
    }
    assert_eq!(got, want);
}

#[test]
fn vacuous_tail_gives_a_vacuous_probability() {
    let (b, s) = random_model_pair(200, 6, 3, 0.005, 2).unwrap();
    let rep = lemma1_conditions(&b, &s, 0, 2.0, 1.0 + 1e-9).unwrap();
    assert!(rep.probability_bound.unwrap() <= 1e-6);
}

#[test]
fn lemma_conclusion_holds_whenever_its_conditions_do() {
    let mut holding = 0;
    for seed in 0..20 {
        let (b, s) = random_model_pair(400, 8, 3, 0.005, 300 + seed).unwrap();
        let rep = lemma1_conditions(&b, &s, 0, 2.0, 2.0).unwrap();
        if rep.holds {
            holding += 1;
            let a = dense(b.as_matrix() + s.as_matrix());
            let l1 = sparse_rep_solve(&a, 0, 1e-6, &SolverConfig::default()).unwrap();
            let d = max_diff(&l1.solution, &rep.z_star);
            assert!(d <= 1e-5, "seed {seed}: ℓ1 and oracle differ by {d}");
        }
    }
    assert!(holding > 10, "conditions held on {holding}/20 seeds");
}

#[test]
fn theorem_conclusion_holds_whenever_its_conditions_do() {
    let mut holding = 0;
    for seed in 0..15 {
        let n = 5 + seed as usize % 3;
        let (b, s) = random_model_pair(250, n, 2, 0.004, 500 + seed).unwrap();
        let v = e(n, 0);
        let z = oracle_solve(&b, &s, &v, &SolverConfig::default()).unwrap().solution;
        let rep = theorem2_conditions(&b, &s, &v, &z, 1000, seed).unwrap();
        assert_eq!(rep.infimum_method, InfimumMethod::ExactLowdim);
        if rep.holds {
            holding += 1;
            let a = dense(b.as_matrix() + s.as_matrix());
            let l1 = sparse_rep_solve(&a, 0, 1e-6, &SolverConfig::default()).unwrap();
            let d = max_diff(&l1.solution, &z);
            assert!(d <= 1e-5, "seed {seed}: ℓ1 and oracle differ by {d}");
        }
    }
    assert!(holding > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coherence_ratio_splits_v_orthogonally(seed in 0u64..10_000, n in 3usize..8) {
        let r_b = 1 + seed as usize % (n - 1);
        let (b, s) = random_model_pair(40, n, r_b, 0.0, seed).unwrap();
        let v: Vec<f64> = gaussian(n, 1, seed + 1).iter().copied().collect();
        let z = oracle_solve(&b, &s, &v, &SolverConfig::default()).unwrap().solution;
        let rep = theorem2_conditions(&b, &s, &v, &z, 200, seed).unwrap();
        let vt = b.as_matrix().clone().svd(false, true).v_t.unwrap();
        let vv = DVector::from_vec(v);
        let row_part = (vt.rows(0, r_b) * &vv).norm_squared();
        let null_part = (vt.rows(r_b, n - r_b) * &vv).norm_squared();
        prop_assert!((row_part + null_part - vv.norm_squared()).abs() <= 1e-10 * vv.norm_squared());
        let ratio = (null_part / row_part).sqrt();
        prop_assert!((rep.coherence_ratio - ratio).abs() <= 1e-8 * ratio.max(1.0));
    }

    #[test]
    fn alpha_flips_with_z(seed in 0u64..10_000) {
        let (b, s) = random_model_pair(30, 5, 2, 0.1, seed).unwrap();
        let a = DenseMatrix::from_matrix(b.as_matrix() + s.as_matrix()).unwrap();
        let mut g = rng(seed);
        let z: Vec<f64> = (0..5).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        let plus = alpha_vector(&a, &s, &z).unwrap();
        let minus = alpha_vector(&a, &s, &neg).unwrap();
        for (p, m) in plus.iter().zip(&minus) {
            prop_assert_eq!(*p, -*m);
        }
    }
}
