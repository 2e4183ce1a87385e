//! Dense revised simplex for `min ‖A x − b‖₁ + w‖x‖₁`.
//!
//! The program is posed in standard form with split variables `x = x⁺ − x⁻`
//! and `A x − b = r⁺ − r⁻`, so the basis has one entry per row of `A`. The
//! slack basis is always feasible, which makes a phase-one pass unnecessary.

use nalgebra::{DMatrix, DVector};

pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective: f64,
    pub pivots: usize,
    pub optimal: bool,
}

const REFACTOR_EVERY: usize = 50;
const BLAND_AFTER: usize = 50;

struct Problem<'a> {
    a: &'a DMatrix<f64>,
    weight: f64,
    exclude: Option<usize>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.a.ncols()
    }

    fn cost(&self, k: usize) -> f64 {
        if k < 2 * self.n() {
            self.weight
        } else {
            1.0
        }
    }

    fn excluded(&self, k: usize) -> bool {
        let n = self.n();
        k < 2 * n && self.exclude == Some(k % n)
    }

    fn column(&self, k: usize, out: &mut DVector<f64>) {
        let (m, n) = self.a.shape();
        if k < 2 * n {
            let sign = if k < n { 1.0 } else { -1.0 };
            out.copy_from(&self.a.column(k % n));
            if sign < 0.0 {
                out.neg_mut();
            }
        } else {
            out.fill(0.0);
            let i = (k - 2 * n) % m;
            out[i] = if k < 2 * n + m { -1.0 } else { 1.0 };
        }
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        let m = self.a.nrows();
        let mut bm = DMatrix::zeros(m, m);
        let mut col = DVector::zeros(m);
        for (l, &k) in basis.iter().enumerate() {
            self.column(k, &mut col);
            bm.set_column(l, &col);
        }
        bm
    }
}

/// Minimizes `Σᵢ |(A x − b)ᵢ| + weight · Σⱼ |xⱼ|`, optionally forcing
/// `x[exclude] = 0`. `weight` may be zero when `A` has full column rank.
pub(crate) fn penalized_lad(
    a: &DMatrix<f64>,
    b: &[f64],
    weight: f64,
    exclude: Option<usize>,
    max_pivots: usize,
) -> LpSolution {
    let (m, n) = a.shape();
    let prob = Problem { a, weight, exclude };
    let bvec = DVector::from_column_slice(b);
    let total = 2 * n + 2 * m;
    let scale = bvec.amax().max(a.amax()).max(1e-300);
    let feas_tol = 1e-11 * scale;
    let cost_tol = 1e-11 * (1.0 + weight);

    // Slack start: r⁻ᵢ = bᵢ when bᵢ ≥ 0, otherwise r⁺ᵢ = −bᵢ.
    let mut basis: Vec<usize> = (0..m).map(|i| if b[i] >= 0.0 { 2 * n + m + i } else { 2 * n + i }).collect();
    let mut binv = DMatrix::zeros(m, m);
    for i in 0..m {
        binv[(i, i)] = if b[i] >= 0.0 { 1.0 } else { -1.0 };
    }
    let mut xb = DVector::from_iterator(m, b.iter().map(|v| v.abs()));
    let mut is_basic = vec![false; total];
    for &k in &basis {
        is_basic[k] = true;
    }

    let mut col = DVector::zeros(m);
    let mut pivots = 0;
    let mut optimal = false;
    let mut degenerate_run = 0;
    let mut since_refactor = 0;
    while pivots < max_pivots {
        let cb = DVector::from_iterator(m, basis.iter().map(|&k| prob.cost(k)));
        let y = binv.tr_mul(&cb);
        let aty = a.tr_mul(&y);
        let reduced = |k: usize| -> f64 {
            if k < n {
                weight - aty[k]
            } else if k < 2 * n {
                weight + aty[k - n]
            } else if k < 2 * n + m {
                1.0 + y[k - 2 * n]
            } else {
                1.0 - y[k - 2 * n - m]
            }
        };
        let bland = degenerate_run >= BLAND_AFTER;
        let mut enter = None;
        let mut best = -cost_tol;
        for k in 0..total {
            if is_basic[k] || prob.excluded(k) {
                continue;
            }
            let rc = reduced(k);
            if rc < best {
                enter = Some(k);
                if bland {
                    break;
                }
                best = rc;
            }
        }
        let Some(enter) = enter else {
            optimal = true;
            break;
        };
        prob.column(enter, &mut col);
        let dcol = &binv * &col;
        let piv_tol = 1e-9 * dcol.amax().max(1e-300);
        // Harris two-pass ratio test.
        let mut bound = f64::INFINITY;
        for i in 0..m {
            if dcol[i] > piv_tol {
                bound = bound.min((xb[i] + feas_tol) / dcol[i]);
            }
        }
        if !bound.is_finite() {
            break;
        }
        let mut leave = None;
        let mut best_piv = 0.0;
        for i in 0..m {
            if dcol[i] > piv_tol && xb[i] / dcol[i] <= bound {
                let better = if bland {
                    leave.is_none_or(|l: usize| basis[i] < basis[l])
                } else {
                    dcol[i] > best_piv
                };
                if better {
                    best_piv = dcol[i];
                    leave = Some(i);
                }
            }
        }
        let leave = leave.expect("the bound is attained by some row");
        let t = (xb[leave] / dcol[leave]).max(0.0);
        if t <= feas_tol / scale {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        xb.axpy(-t, &dcol, 1.0);
        xb[leave] = t;
        // Eta update of the explicit inverse.
        let piv = dcol[leave];
        let row_l = (binv.row(leave) / piv).transpose();
        let mut f = dcol.clone();
        f[leave] = 0.0;
        binv.ger(-1.0, &f, &row_l, 1.0);
        binv.set_row(leave, &row_l.transpose());
        is_basic[basis[leave]] = false;
        is_basic[enter] = true;
        basis[leave] = enter;
        pivots += 1;
        since_refactor += 1;
        if since_refactor >= REFACTOR_EVERY {
            if let Some(fresh) = prob.basis_matrix(&basis).try_inverse() {
                binv = fresh;
                xb = &binv * &bvec;
                xb.apply(|v| *v = v.max(0.0));
            }
            since_refactor = 0;
        }
    }
    if let Some(fresh) = prob.basis_matrix(&basis).try_inverse() {
        xb = fresh * &bvec;
    }
    let mut x = vec![0.0; n];
    for (l, &k) in basis.iter().enumerate() {
        if k < n {
            x[k] += xb[l];
        } else if k < 2 * n {
            x[k - n] -= xb[l];
        }
    }
    if let Some(e) = exclude {
        x[e] = 0.0;
    }
    let xv = DVector::from_column_slice(&x);
    let resid: f64 = (a * &xv - &bvec).iter().map(|v| v.abs()).sum();
    let objective = resid + weight * x.iter().map(|v| v.abs()).sum::<f64>();
    LpSolution { x, objective, pivots, optimal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn interpolates_square_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let sol = penalized_lad(&a, &[3.0, 5.0], 0.0, None, 1000);
        assert!(sol.optimal);
        assert!((sol.x[0] - 0.8).abs() < 1e-12 && (sol.x[1] - 1.4).abs() < 1e-12);
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn heavy_penalty_keeps_zero() {
        let mut rng = rng_from(3);
        let a = DMatrix::from_fn(6, 9, |_, _| StandardNormal.sample(&mut rng));
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let sol = penalized_lad(&a, &b, 1e3, None, 1000);
        assert!(sol.optimal);
        assert!(sol.x.iter().all(|&v| v == 0.0));
        assert!((sol.objective - b.iter().map(|v| v.abs()).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn excluded_column_stays_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let sol = penalized_lad(&a, &[1.0, 2.0, 3.0], 0.01, Some(0), 1000);
        assert_eq!(sol.x[0], 0.0);
        assert!((sol.x[1] - 1.0).abs() < 1e-12);
    }
}
