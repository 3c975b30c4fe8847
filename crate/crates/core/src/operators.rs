//! The linear measurement map `A: R^{m x n} -> R^p`, its adjoint and the
//! gradient of the data-fit term `½‖A(X) − b‖²`.

use std::collections::HashSet;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix};

/// Inflation applied to power-iteration Lipschitz estimates.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;
const LIPSCHITZ_TOL: f64 = 1e-6;

/// A vector of `p` measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector(Vec<f64>);

impl MeasurementVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector"));
        }
        Ok(MeasurementVector(values))
    }

    pub fn zeros(p: usize) -> Self {
        MeasurementVector(vec![0.0; p])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// `self − other`.
    pub fn sub(&self, other: &MeasurementVector) -> MeasurementVector {
        MeasurementVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + other`.
    pub fn add(&self, other: &MeasurementVector) -> MeasurementVector {
        MeasurementVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Deref for MeasurementVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Observation of the entries listed in `omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryMask {
    rows: usize,
    cols: usize,
    omega: Vec<(usize, usize)>,
}

impl EntryMask {
    /// Keeps the order of `omega`; duplicates and out-of-range indices are
    /// rejected.
    pub fn new(rows: usize, cols: usize, omega: Vec<(usize, usize)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("mask shape must be positive"));
        }
        if omega.is_empty() {
            return Err(Error::invalid("entry mask needs at least one observed entry"));
        }
        let mut seen = HashSet::with_capacity(omega.len());
        for &(i, j) in &omega {
            if i >= rows || j >= cols {
                return Err(Error::invalid(format!(
                    "index ({i}, {j}) out of range for {rows}x{cols}"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::invalid(format!("duplicate index ({i}, {j})")));
            }
        }
        Ok(EntryMask { rows, cols, omega })
    }

    /// Every entry, in row-major order.
    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        let omega = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
        EntryMask::new(rows, cols, omega)
    }

    pub fn omega(&self) -> &[(usize, usize)] {
        &self.omega
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// A dense `p x (m·n)` coefficient matrix acting on the column-major `vec(X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitAffine {
    rows: usize,
    cols: usize,
    coefficients: DenseMatrix,
}

impl ExplicitAffine {
    pub fn new(rows: usize, cols: usize, coefficients: DenseMatrix) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("operator shape must be positive"));
        }
        if coefficients.cols() != rows * cols {
            return Err(Error::shape(
                format!("{} coefficient columns", rows * cols),
                format!("{}", coefficients.cols()),
            ));
        }
        if coefficients.rows() == 0 {
            return Err(Error::invalid("need at least one measurement row"));
        }
        coefficients.ensure_finite("coefficient matrix")?;
        Ok(ExplicitAffine {
            rows,
            cols,
            coefficients,
        })
    }

    pub fn coefficients(&self) -> &DenseMatrix {
        &self.coefficients
    }
}

/// The linear measurement map.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementMap {
    EntryMask(EntryMask),
    ExplicitAffine(ExplicitAffine),
}

impl From<EntryMask> for MeasurementMap {
    fn from(m: EntryMask) -> Self {
        MeasurementMap::EntryMask(m)
    }
}

impl From<ExplicitAffine> for MeasurementMap {
    fn from(m: ExplicitAffine) -> Self {
        MeasurementMap::ExplicitAffine(m)
    }
}

impl MeasurementMap {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MeasurementMap::EntryMask(m) => (m.rows, m.cols),
            MeasurementMap::ExplicitAffine(a) => (a.rows, a.cols),
        }
    }

    /// Number of measurements `p`.
    pub fn len(&self) -> usize {
        match self {
            MeasurementMap::EntryMask(m) => m.omega.len(),
            MeasurementMap::ExplicitAffine(a) => a.coefficients.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_matrix(&self, x: &DenseMatrix) -> Result<()> {
        let shape = self.shape();
        if x.shape() != shape {
            return Err(Error::shape(
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_vector(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::shape(
                format!("{} measurements", self.len()),
                format!("{}", y.len()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<MeasurementVector> {
        self.check_matrix(x)?;
        let values = match self {
            MeasurementMap::EntryMask(m) => m.omega.iter().map(|&(i, j)| x.get(i, j)).collect(),
            MeasurementMap::ExplicitAffine(a) => a.coefficients.matvec(&x.vec_column_major()),
        };
        Ok(MeasurementVector(values))
    }

    pub fn adjoint(&self, y: &[f64]) -> Result<DenseMatrix> {
        self.check_vector(y)?;
        let (rows, cols) = self.shape();
        Ok(match self {
            MeasurementMap::EntryMask(m) => {
                let mut out = DenseMatrix::zeros(rows, cols);
                for (&(i, j), &v) in m.omega.iter().zip(y) {
                    out.set(i, j, v);
                }
                out
            }
            MeasurementMap::ExplicitAffine(a) => {
                DenseMatrix::from_vec_column_major(rows, cols, &a.coefficients.tr_matvec(y))
            }
        })
    }

    /// `A*(A(X) − b)`.
    pub fn gradient(&self, x: &DenseMatrix, b: &[f64]) -> Result<DenseMatrix> {
        self.check_vector(b)?;
        let residual = self.residual(x, b)?;
        self.adjoint(&residual)
    }

    /// `A(X) − b`.
    pub fn residual(&self, x: &DenseMatrix, b: &[f64]) -> Result<MeasurementVector> {
        self.check_vector(b)?;
        let mut r = self.apply(x)?;
        for (ri, bi) in r.0.iter_mut().zip(b) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Upper bound on `λ_max(AᵀA)`. Exactly one for an entry mask; for an
    /// explicit operator a power-iteration estimate of `σ₁(A)²` inflated by
    /// [`LIPSCHITZ_SAFETY`].
    pub fn lipschitz_bound(&self) -> Result<f64> {
        match self {
            MeasurementMap::EntryMask(_) => Ok(1.0),
            MeasurementMap::ExplicitAffine(a) => {
                let s = spectral_norm(&a.coefficients, LIPSCHITZ_TOL)?;
                Ok(s * s * LIPSCHITZ_SAFETY)
            }
        }
    }
}
