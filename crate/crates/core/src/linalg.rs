//! Dense matrix primitives, exact SVD and the singular-value shrinkage operators.
//!
//! [`DenseMatrix`] wraps an `nalgebra` matrix. Construction from user data is
//! row-major; all operations reject non-finite input at the boundary.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// A dense real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::shape(
                format!("{} entries", rows * cols),
                format!("{} entries", entries.len()),
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(DenseMatrix(DMatrix::from_row_slice(rows, cols, entries)))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        DenseMatrix(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        DenseMatrix(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn from_nalgebra(inner: DMatrix<f64>) -> Self {
        DenseMatrix(inner)
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.0[(row, col)] = value;
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let (m, n) = self.shape();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Column-stacked vectorization.
    pub fn vec_column_major(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    pub fn from_vec_column_major(rows: usize, cols: usize, values: &[f64]) -> Self {
        DenseMatrix(DMatrix::from_column_slice(rows, cols, values))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &DenseMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix(self.0.transpose())
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix(&self.0 * factor)
    }

    /// `self + factor * other`, in place.
    pub fn axpy(&mut self, factor: f64, other: &DenseMatrix) {
        self.0.zip_apply(&other.0, |a, b| *a += factor * b);
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 * &other.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (&self.0 * v).iter().copied().collect()
    }

    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        self.0.tr_mul(&v).iter().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> DenseMatrix {
        DenseMatrix(self.0.map(f))
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix{:?}", self.0.shape())?;
        if self.rows() * self.cols() <= 64 {
            write!(f, " {}", self.0)?;
        }
        Ok(())
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;
    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.matmul(rhs)
    }
}

/// Singular value factorization `A ≈ U Diag(sigma) Vᵀ`.
///
/// When `approximate` is set the columns of `v` are not required to be
/// orthonormal; they come straight out of the Monte Carlo reconstruction.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
    pub approximate: bool,
}

impl SvdFactors {
    pub fn empty(rows: usize, cols: usize, approximate: bool) -> Self {
        SvdFactors {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(cols, 0),
            approximate,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Shape `(m, n)` of the factored matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// `U Diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(&self.sigma)
    }

    /// `U Diag(values) Vᵀ` with the stored singular vectors.
    pub fn reconstruct_with(&self, values: &[f64]) -> DenseMatrix {
        debug_assert_eq!(values.len(), self.rank());
        let (m, n) = self.shape();
        if values.is_empty() {
            return DenseMatrix::zeros(m, n);
        }
        let mut scaled = self.u.0.clone();
        for (k, &s) in values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(s);
        }
        DenseMatrix(scaled * self.v.0.transpose())
    }

    /// `U Vᵀ`, the sign pattern of the factored matrix.
    pub fn polar_factor(&self) -> DenseMatrix {
        let ones = vec![1.0; self.rank()];
        self.reconstruct_with(&ones)
    }

    /// Replaces the singular values, re-sorting the triplets into
    /// nonincreasing order and dropping those that are zero.
    pub fn set_singular_values(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rank());
        let mut order: Vec<usize> = (0..values.len()).filter(|&k| values[k] > 0.0).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        self.u = DenseMatrix(self.u.0.select_columns(order.iter()));
        self.v = DenseMatrix(self.v.0.select_columns(order.iter()));
        self.sigma = order.iter().map(|&k| values[k]).collect();
    }

    /// Keeps only the leading `k` triplets.
    pub fn truncate(&mut self, k: usize) {
        if k >= self.rank() {
            return;
        }
        self.sigma.truncate(k);
        self.u = DenseMatrix(self.u.0.columns(0, k).into_owned());
        self.v = DenseMatrix(self.v.0.columns(0, k).into_owned());
    }
}

/// Thin SVD `(U, σ, V)` with `σ` nonincreasing, computed by `faer`.
///
/// nalgebra's own SVD returns wrong singular vectors for a few percent of
/// exactly rank-deficient inputs (reconstruction errors of order one), which
/// are common here: low-rank iterates and sampled matrices with repeated
/// columns. `faer` handles them correctly.
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok((DMatrix::zeros(m, 0), Vec::new(), DMatrix::zeros(n, 0)));
    }
    let (u, mut sigma, v) = match faer_svd(a, 1.0)? {
        Some(f) => f,
        None => {
            // faer occasionally produces a NaN singular value on exactly
            // rank-deficient input; the same matrix rescaled to unit max
            // entry goes through.
            let scale = a.amax();
            if !(scale > 0.0) {
                return Err(Error::SvdFailed("non-finite singular values".into()));
            }
            faer_svd(a, 1.0 / scale)?
                .ok_or_else(|| Error::SvdFailed("non-finite singular values".into()))
                .map(|(u, s, v)| (u, s.into_iter().map(|x| x * scale).collect(), v))?
        }
    };
    debug_assert_eq!(sigma.len(), k);
    sigma.iter_mut().for_each(|s| *s = s.max(0.0));
    if sigma.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::SvdFailed("singular values not sorted".into()));
    }
    Ok((u, sigma, v))
}

/// SVD of `scale · a`; `None` if any output is non-finite.
fn faer_svd(a: &DMatrix<f64>, scale: f64) -> Result<Option<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)>> {
    let (m, n) = a.shape();
    let k = m.min(n);
    let src = faer::Mat::<f64>::from_fn(m, n, |i, j| scale * a[(i, j)]);
    let svd = src
        .thin_svd()
        .map_err(|e| Error::SvdFailed(format!("{e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let sigma: Vec<f64> = (0..k).map(|t| fs[t]).collect();
    let u = DMatrix::from_fn(m, k, |i, j| fu[(i, j)]);
    let v = DMatrix::from_fn(n, k, |i, j| fv[(i, j)]);
    let finite = sigma.iter().all(|s| s.is_finite())
        && u.iter().all(|x| x.is_finite())
        && v.iter().all(|x| x.is_finite());
    Ok(finite.then_some((u, sigma, v)))
}

/// Exact thin SVD with numerically zero singular values dropped.
pub fn full_svd(a: &DenseMatrix) -> Result<SvdFactors> {
    a.ensure_finite("SVD input")?;
    let (m, n) = a.shape();
    let (u, sigma, v) = thin_svd(&a.0)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(SvdFactors::empty(m, n, false));
    }
    let k = sigma.iter().take_while(|&&s| s > RANK_THRESHOLD * top).count();
    Ok(SvdFactors {
        u: DenseMatrix(u.columns(0, k).into_owned()),
        sigma: sigma[..k].to_vec(),
        v: DenseMatrix(v.columns(0, k).into_owned()),
        approximate: false,
    })
}

/// Nonnegative vector shrinkage: `max(x_i - nu, 0)` componentwise.
pub fn shrink_vector(x: &[f64], nu: f64) -> Result<Vec<f64>> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("shrinkage threshold must be positive, got {nu}")));
    }
    if let Some(bad) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "shrinkage input must be nonnegative and finite, got {bad}"
        )));
    }
    Ok(x.iter()
        .map(|&v| if v - nu > 0.0 { v - nu } else { 0.0 })
        .collect())
}

/// Shrinks the singular values of a factorization by `nu`, dropping the
/// triplets that reach zero.
pub fn shrink_factors(mut factors: SvdFactors, nu: f64) -> Result<SvdFactors> {
    let shrunk = shrink_vector(&factors.sigma, nu)?;
    let keep = shrunk.iter().take_while(|&&s| s > 0.0).count();
    factors.truncate(keep);
    factors.sigma = shrunk[..keep].to_vec();
    Ok(factors)
}

/// Matrix shrinkage `S_nu(Y) = U Diag(max(sigma - nu, 0)) Vᵀ`, the proximal
/// map of `nu * ||.||_*`. Returns the shrunk matrix and its factors.
pub fn shrink_matrix(y: &DenseMatrix, nu: f64) -> Result<(DenseMatrix, SvdFactors)> {
    let factors = shrink_factors(full_svd(y)?, nu)?;
    Ok((factors.reconstruct(), factors))
}

const POWER_MAX_ITERS: usize = 5000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector. If that start happens to be
/// annihilated by `A`, a second deterministic start (a ramp) is tried.
pub fn spectral_norm(a: &DenseMatrix, tol: f64) -> Result<f64> {
    a.ensure_finite("spectral norm input")?;
    if !(tol > 0.0) {
        return Err(Error::invalid("spectral norm tolerance must be positive"));
    }
    let n = a.cols();
    if n == 0 || a.rows() == 0 || a.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let ones = DVector::from_element(n, 1.0);
    let estimate = power_iterate(&a.0, ones, tol);
    if estimate > 0.0 {
        return Ok(estimate);
    }
    let ramp = DVector::from_fn(n, |j, _| 1.0 + (j as f64 + 1.0) / n as f64 * std::f64::consts::E);
    Ok(power_iterate(&a.0, ramp, tol))
}

fn power_iterate(a: &DMatrix<f64>, start: DVector<f64>, tol: f64) -> f64 {
    let mut v = start.normalize();
    let mut prev = 0.0_f64;
    for _ in 0..POWER_MAX_ITERS {
        let av = a * &v;
        let sigma = av.norm();
        if sigma == 0.0 {
            return 0.0;
        }
        let w = a.tr_mul(&av);
        let w_norm = w.norm();
        if w_norm == 0.0 {
            return sigma;
        }
        v = w / w_norm;
        // Convergence of the estimate is monitored with a margin so that the
        // remaining error stays below `tol` for moderate spectral gaps.
        if (sigma - prev).abs() <= 0.1 * tol * sigma {
            return sigma.max(prev);
        }
        prev = sigma;
    }
    prev
}
