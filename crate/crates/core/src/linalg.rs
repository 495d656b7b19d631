//! Small dense linear-algebra helpers shared by the distribution layers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest admissible ratio between the smallest and largest Cholesky pivot.
pub const PIVOT_RATIO: f64 = 1e-10;

/// Cholesky factorization of a symmetric positive-definite matrix together
/// with the quantities every density evaluation needs.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    /// Lower-triangular factor, `A = L Lᵀ`.
    pub lower: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
}

impl SpdFactor {
    /// Factorizes `a`. Near-singular matrices are rejected rather than
    /// regularized.
    pub fn new(a: &DMatrix<f64>, name: &str) -> Result<Self> {
        let not_pd = || Error::NotPositiveDefinite { name: name.to_string() };
        if !a.is_square() || a.nrows() == 0 || a.iter().any(|v| !v.is_finite()) {
            return Err(not_pd());
        }
        let chol = a.clone().cholesky().ok_or_else(not_pd)?;
        let lower = chol.l();
        let diag = lower.diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if !(lo > 0.0) || lo < PIVOT_RATIO * hi {
            return Err(not_pd());
        }
        let log_det = 2.0 * diag.iter().map(|d| d.ln()).sum::<f64>();
        let inverse = symmetrize(&chol.inverse());
        Ok(SpdFactor {
            lower,
            inverse,
            log_det,
        })
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute difference between `a` and its transpose.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry to an absolute tolerance of `1e-12` and positive
/// definiteness.
pub fn check_spd(a: &DMatrix<f64>, name: &str) -> Result<SpdFactor> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{name} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric {
            name: name.to_string(),
            asymmetry: asym,
        });
    }
    SpdFactor::new(a, name)
}

/// Solves `L x = b` in place for lower-triangular `L` stored row-major in a
/// flat slice of side `n`.
pub(crate) fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L` stored row-major.
pub(crate) fn backward_solve_transposed(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Row-major flattening of a dense matrix.
pub fn to_row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Log-density of a dense multivariate normal, evaluated independently of
/// any Kronecker structure.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let factor = SpdFactor::new(cov, "covariance")?;
    let d = x.len() as f64;
    let diff = x - mean;
    let quad = (diff.transpose() * &factor.inverse * &diff)[(0, 0)];
    Ok(-0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * factor.log_det - 0.5 * quad)
}

/// Serde adapter writing matrices as arrays of rows.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}
