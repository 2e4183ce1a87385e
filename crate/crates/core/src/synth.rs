//! Synthetic instances of the `D = L + S + C` data model.
//!
//! `L = U Q` with standard-normal factors (optionally a union of independent
//! subspaces), `S` has a Bernoulli(ρ) support with values uniform on
//! `[-a, a]`, and `C` holds `K` outlier columns whose directions are uniform on
//! the unit sphere. `L` and `S` vanish on the outlier columns.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mat_core::{orthonormal_basis, DenseMatrix, RANK_TOL};

/// Avalanche mixer deriving independent stream seeds from a base seed.
pub fn mix64(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn default_amplitude() -> f64 {
    1.0
}
fn default_clusters() -> usize {
    1
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n1: usize,
    pub n2: usize,
    pub rank_r: usize,
    pub rho: f64,
    pub num_outliers_k: usize,
    /// Nonzero entries of `S` are uniform on `[-sparse_amplitude, sparse_amplitude]`.
    #[serde(default = "default_amplitude")]
    pub sparse_amplitude: f64,
    #[serde(default = "default_clusters")]
    pub num_clusters: usize,
    pub seed: u64,
    /// Place the outliers in the first `K` columns instead of random positions.
    #[serde(default)]
    pub leading_outliers: bool,
    /// Outlier column norm as a multiple of the RMS column norm of `L`.
    #[serde(default = "default_scale")]
    pub outlier_scale: f64,
}

impl ModelParams {
    pub fn new(n1: usize, n2: usize, rank_r: usize, rho: f64, num_outliers_k: usize, seed: u64) -> Self {
        ModelParams {
            n1,
            n2,
            rank_r,
            rho,
            num_outliers_k,
            sparse_amplitude: 1.0,
            num_clusters: 1,
            seed,
            leading_outliers: false,
            outlier_scale: 1.0,
        }
    }

    pub fn leading(mut self) -> Self {
        self.leading_outliers = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return invalid("n1 and n2 must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return invalid(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.num_outliers_k > self.n2 {
            return invalid(format!("K = {} exceeds n2 = {}", self.num_outliers_k, self.n2));
        }
        let inliers = self.n2 - self.num_outliers_k;
        if self.rank_r == 0 {
            return invalid("rank_r must be at least 1");
        }
        if inliers == 0 {
            return invalid("at least one inlier column is needed to carry a rank >= 1 low-rank part");
        }
        if self.rank_r > self.n1.min(inliers) {
            return invalid(format!(
                "rank_r = {} exceeds min(n1, n2 - K) = {}",
                self.rank_r,
                self.n1.min(inliers)
            ));
        }
        if self.num_clusters == 0 {
            return invalid("num_clusters must be at least 1");
        }
        if self.num_clusters > 1 {
            if self.rank_r % self.num_clusters != 0 {
                return invalid("num_clusters must divide rank_r");
            }
            let per_cluster_rank = self.rank_r / self.num_clusters;
            if inliers / self.num_clusters < per_cluster_rank {
                return invalid("too few inlier columns per cluster for the requested rank");
            }
        }
        if !(self.sparse_amplitude >= 0.0 && self.sparse_amplitude.is_finite()) {
            return invalid("sparse_amplitude must be finite and non-negative");
        }
        if !(self.outlier_scale > 0.0 && self.outlier_scale.is_finite()) {
            return invalid("outlier_scale must be finite and positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub d: DenseMatrix,
    pub l: DenseMatrix,
    pub s: DenseMatrix,
    pub c: DenseMatrix,
    /// Sorted column indices where `C` is non-zero.
    pub outlier_indices: Vec<usize>,
    pub params: ModelParams,
}

impl Instance {
    /// Orthonormal basis of the column space of `L` (rank `r`).
    pub fn column_space(&self) -> DMatrix<f64> {
        orthonormal_basis(self.l.as_matrix(), RANK_TOL, Some(self.params.rank_r))
    }

    pub fn inlier_indices(&self) -> Vec<usize> {
        (0..self.params.n2).filter(|j| self.outlier_indices.binary_search(j).is_err()).collect()
    }
}

/// `g / ||g||` for a standard normal `g`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 1, "sphere dimension must be positive");
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major fill so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

pub fn generate_instance(params: &ModelParams) -> Result<Instance> {
    params.validate()?;
    let (n1, n2, r, k) = (params.n1, params.n2, params.rank_r, params.num_outliers_k);
    let mut rng = rng_from(params.seed);

    let mut outliers: Vec<usize> = if params.leading_outliers {
        (0..k).collect()
    } else {
        index::sample(&mut rng, n2, k).into_vec()
    };
    outliers.sort_unstable();
    let is_outlier = {
        let mut mask = vec![false; n2];
        for &j in &outliers {
            mask[j] = true;
        }
        mask
    };
    let inliers: Vec<usize> = (0..n2).filter(|&j| !is_outlier[j]).collect();

    let mut l = DMatrix::zeros(n1, n2);
    if params.num_clusters <= 1 {
        let u = gaussian_matrix(n1, r, &mut rng);
        let q = gaussian_matrix(r, n2, &mut rng);
        l = u * q;
    } else {
        let nc = params.num_clusters;
        let sub_rank = r / nc;
        let per = inliers.len() / nc;
        for c in 0..nc {
            let u = gaussian_matrix(n1, sub_rank, &mut rng);
            let lo = c * per;
            let hi = if c + 1 == nc { inliers.len() } else { lo + per };
            let q = gaussian_matrix(sub_rank, hi - lo, &mut rng);
            let block = u * q;
            for (t, &j) in inliers[lo..hi].iter().enumerate() {
                l.set_column(j, &block.column(t));
            }
        }
    }
    for &j in &outliers {
        l.column_mut(j).fill(0.0);
    }

    let mut s = DMatrix::zeros(n1, n2);
    let a = params.sparse_amplitude;
    for i in 0..n1 {
        for j in 0..n2 {
            let hit = rng.random::<f64>() < params.rho;
            let value = rng.random_range(-1.0..1.0) * a;
            if hit && !is_outlier[j] {
                s[(i, j)] = value;
            }
        }
    }

    let rms_norm = if inliers.is_empty() {
        1.0
    } else {
        let total: f64 = inliers.iter().map(|&j| l.column(j).norm_squared()).sum();
        (total / inliers.len() as f64).sqrt()
    };
    let magnitude = params.outlier_scale * rms_norm;
    let mut c = DMatrix::zeros(n1, n2);
    for &j in &outliers {
        let dir = sample_unit_sphere(n1, &mut rng);
        c.set_column(j, &(DVector::from_vec(dir) * magnitude));
    }

    let d = &l + &s + &c;
    Ok(Instance {
        d: DenseMatrix::from_matrix(d)?,
        l: DenseMatrix::from_matrix(l)?,
        s: DenseMatrix::from_matrix(s)?,
        c: DenseMatrix::from_matrix(c)?,
        outlier_indices: outliers,
        params: params.clone(),
    })
}
