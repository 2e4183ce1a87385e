//! Dense linear-algebra kernel shared by every solver.
//!
//! [`DenseMatrix`] is the validated carrier for data matrices at the public
//! boundary. Solvers work on the wrapped [`nalgebra::DMatrix`] directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LscError, Result};

/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Floor returned by [`subspace_recovery_error`] for (numerically) exact recovery.
pub const LOG_ERROR_FLOOR: f64 = -16.0;

/// Real dense matrix with finite entries and positive dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if entries.len() != rows * cols {
            return invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            ));
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return invalid(format!(
                "matrix dimensions must be positive, got {}x{}",
                m.nrows(),
                m.ncols()
            ));
        }
        if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
            let (r, c) = (pos % m.nrows(), pos / m.nrows());
            return invalid(format!("non-finite entry at ({r}, {c})"));
        }
        Ok(DenseMatrix(m))
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return invalid("columns have differing lengths");
        }
        let mut m = DMatrix::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            m.column_mut(j).copy_from_slice(c);
        }
        Self::from_matrix(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            out.extend(self.0.row(i).iter().copied());
        }
        out
    }

    /// Submatrix made of the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return invalid("cannot select zero columns");
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols()) {
            return invalid(format!("column index {bad} out of range"));
        }
        Ok(DenseMatrix(self.0.select_columns(cols)))
    }
}

impl AsRef<DMatrix<f64>> for DenseMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Compact SVD restricted to the numerical rank.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// `rows x k`, orthonormal columns.
    pub left_basis: DMatrix<f64>,
    /// Non-increasing, length `k`.
    pub singular_values: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub right_basis: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left_basis.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right_basis.transpose()
    }
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Full (sorted, untruncated) SVD: returns `(U, sigma, V)` with `min(m, n)` triplets.
pub(crate) fn svd_full(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (DMatrix::zeros(a.nrows(), 0), Vec::new(), DMatrix::zeros(a.ncols(), 0));
    }
    let svd = to_faer(a).thin_svd().expect("SVD iteration failed to converge");
    let sigma = (0..k).map(|i| svd.S()[i]).collect();
    (from_faer(svd.U()), sigma, from_faer(svd.V()))
}

/// Singular values in non-increasing order.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    to_faer(a).singular_values().expect("SVD iteration failed to converge")
}

/// Thin SVD truncated at singular values `> rel_tol * sigma_max`.
pub(crate) fn svd_truncated(a: &DMatrix<f64>, rel_tol: f64) -> ThinSvd {
    let (u, sigma, v) = svd_full(a);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let k = sigma.iter().take_while(|&&s| s > rel_tol * smax && s > 0.0).count();
    ThinSvd {
        left_basis: u.columns(0, k).into_owned(),
        singular_values: sigma[..k].to_vec(),
        right_basis: v.columns(0, k).into_owned(),
    }
}

/// Compact SVD keeping every triplet with `sigma > 1e-10 * sigma_max`.
pub fn svd_thin(a: &DenseMatrix) -> ThinSvd {
    svd_truncated(a.as_matrix(), RANK_TOL)
}

/// Same as [`svd_thin`] for unvalidated input; rejects non-finite entries.
pub fn svd_thin_checked(a: &DMatrix<f64>) -> Result<ThinSvd> {
    if a.is_empty() {
        return invalid("SVD of an empty matrix");
    }
    if a.iter().any(|x| !x.is_finite()) {
        return invalid("SVD input contains non-finite entries");
    }
    Ok(svd_truncated(a, RANK_TOL))
}

/// Numerical rank: count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sigma = singular_values(a);
    let smax = sigma[0];
    sigma.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count()
}

/// Soft threshold `sign(x) * max(|x| - tau, 0)`.
pub fn shrink(x: f64, tau: f64) -> Result<f64> {
    if tau < 0.0 || tau.is_nan() {
        return invalid(format!("shrinkage threshold must be non-negative, got {tau}"));
    }
    Ok(soft(x, tau))
}

#[inline]
pub(crate) fn soft(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Elementwise soft threshold of a matrix.
pub fn shrink_matrix(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    shrink(0.0, tau)?;
    Ok(DenseMatrix(a.as_matrix().map(|x| soft(x, tau))))
}

/// Singular value thresholding: `U diag(max(sigma - tau, 0)) V^T`.
pub fn sv_threshold(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if tau < 0.0 || tau.is_nan() {
        return invalid(format!("singular value threshold must be non-negative, got {tau}"));
    }
    Ok(DenseMatrix(svt(a.as_matrix(), tau).0))
}

/// Returns the thresholded matrix and the number of surviving singular values.
pub(crate) fn svt(a: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, usize) {
    let (u, sigma, v) = svd_full(a);
    let kept: Vec<f64> = sigma.iter().map(|s| s - tau).take_while(|&s| s > 0.0).collect();
    let k = kept.len();
    if k == 0 {
        return (DMatrix::zeros(a.nrows(), a.ncols()), 0);
    }
    let mut uk = u.columns(0, k).into_owned();
    for (j, s) in kept.iter().enumerate() {
        uk.column_mut(j).scale_mut(*s);
    }
    (uk * v.columns(0, k).transpose(), k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Sum of absolute entries.
    L1,
    Fro,
    Spectral,
    /// Sum of column Euclidean norms.
    L12,
    Nuclear,
}

pub fn matrix_norm(a: &DenseMatrix, kind: NormKind) -> f64 {
    norm_of(a.as_matrix(), kind)
}

pub(crate) fn norm_of(a: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => a.iter().map(|x| x.abs()).sum(),
        NormKind::Fro => a.norm(),
        NormKind::Spectral => {
            if a.is_empty() {
                0.0
            } else {
                singular_values(a).first().copied().unwrap_or(0.0)
            }
        }
        NormKind::L12 => a.column_iter().map(|c| c.norm()).sum(),
        NormKind::Nuclear => {
            if a.is_empty() {
                0.0
            } else {
                singular_values(a).iter().sum()
            }
        }
    }
}

/// Largest deviation of `Q^T Q` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// `log10(||U - Û Ûᵀ U||_F / ||U||_F)`, clamped below at -16.
///
/// Both arguments must have orthonormal columns (Gram defect at most 1e-6).
pub fn subspace_recovery_error(u: &DMatrix<f64>, u_hat: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != u_hat.nrows() {
        return invalid(format!(
            "bases live in different spaces ({} vs {} rows)",
            u.nrows(),
            u_hat.nrows()
        ));
    }
    if u.ncols() == 0 {
        return invalid("reference basis is empty");
    }
    for (name, q) in [("U", u), ("U_hat", u_hat)] {
        let defect = orthonormality_defect(q);
        if defect > 1e-6 {
            return Err(LscError::InvalidInput(format!(
                "{name} is not orthonormal (Gram defect {defect:.3e})"
            )));
        }
    }
    let residual = if u_hat.ncols() == 0 {
        u.clone()
    } else {
        u - u_hat * (u_hat.transpose() * u)
    };
    let ratio = residual.norm() / u.norm();
    if ratio < 1e-16 {
        Ok(LOG_ERROR_FLOOR)
    } else {
        Ok(ratio.log10().max(LOG_ERROR_FLOOR))
    }
}

/// `||(I - U Uᵀ) Û||_F`, the subspace-containment distance used as a success test.
pub fn projection_residual(u: &DMatrix<f64>, u_hat: &DMatrix<f64>) -> f64 {
    if u_hat.ncols() == 0 {
        return 0.0;
    }
    (u_hat - u * (u.transpose() * u_hat)).norm()
}

/// Orthonormal basis of the column space.
///
/// With `rank = Some(k)` the top `k` left singular vectors are returned;
/// otherwise the numerical rank at `rel_tol * sigma_max` is used.
pub fn orthonormal_basis(a: &DMatrix<f64>, rel_tol: f64, rank: Option<usize>) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let (u, sigma, _) = svd_full(a);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let k = match rank {
        Some(k) => k.min(sigma.len()),
        None => sigma.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count(),
    };
    u.columns(0, k).into_owned()
}

/// Minimum-norm least-squares solution through a truncated pseudo-inverse.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = svd_truncated(a, 1e-12);
    let coeffs = svd.left_basis.transpose() * b;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(&svd.singular_values).map(|(c, s)| c / s),
    );
    &svd.right_basis * scaled
}
