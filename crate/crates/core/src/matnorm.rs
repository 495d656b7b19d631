//! Matrix variate normal distribution `N_{r×p}(M, Φ, Ω)`.
//!
//! With the row-major vectorization of [`crate::tensor_io`], a draw `X`
//! satisfies `vec(X) ~ N(vec(M), Φ ⊗ Ω)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

/// Mean matrix and the row/column covariance pair of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatNormParams {
    #[serde(rename = "M", with = "linalg::row_major")]
    pub mean: DMatrix<f64>,
    #[serde(rename = "Phi", with = "linalg::row_major")]
    pub phi: DMatrix<f64>,
    #[serde(rename = "Omega", with = "linalg::row_major")]
    pub omega: DMatrix<f64>,
}

impl MatNormParams {
    /// Validates shapes, symmetry and positive definiteness.
    pub fn new(mean: DMatrix<f64>, phi: DMatrix<f64>, omega: DMatrix<f64>) -> Result<Self> {
        let params = MatNormParams { mean, phi, omega };
        params.validate()?;
        Ok(params)
    }

    /// Zero mean with identity covariances.
    pub fn standard(r: usize, p: usize) -> Self {
        MatNormParams {
            mean: DMatrix::zeros(r, p),
            phi: DMatrix::identity(r, r),
            omega: DMatrix::identity(p, p),
        }
    }

    pub fn r(&self) -> usize {
        self.mean.nrows()
    }

    pub fn p(&self) -> usize {
        self.mean.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        self.factorize().map(|_| ())
    }

    /// Cholesky factors of both covariances.
    pub fn factorize(&self) -> Result<MatNormFactors> {
        let (r, p) = (self.r(), self.p());
        if r == 0 || p == 0 {
            return Err(Error::Dimension("mean matrix must be at least 1x1".into()));
        }
        if self.phi.shape() != (r, r) || self.omega.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "mean is {r}x{p} but Phi is {:?} and Omega is {:?}",
                self.phi.shape(),
                self.omega.shape()
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mean matrix has non-finite entries".into()));
        }
        Ok(MatNormFactors {
            phi: linalg::check_spd(&self.phi, "Phi")?,
            omega: linalg::check_spd(&self.omega, "Omega")?,
        })
    }
}

/// Precomputed factorizations of `Φ` and `Ω`.
#[derive(Debug, Clone)]
pub struct MatNormFactors {
    pub phi: SpdFactor,
    pub omega: SpdFactor,
}

impl MatNormFactors {
    /// Normalizing constant: `-(rp/2) log 2π - (p/2) log|Φ| - (r/2) log|Ω|`.
    pub fn log_normalizer(&self) -> f64 {
        let r = self.phi.lower.nrows() as f64;
        let p = self.omega.lower.nrows() as f64;
        -0.5 * r * p * (2.0 * std::f64::consts::PI).ln() - 0.5 * p * self.phi.log_det - 0.5 * r * self.omega.log_det
    }

    /// `tr[Φ⁻¹ D Ω⁻¹ Dᵀ]` for a deviation matrix `D`.
    pub fn quadratic_form(&self, deviation: &DMatrix<f64>) -> f64 {
        let weighted = &self.phi.inverse * deviation * &self.omega.inverse;
        weighted.component_mul(deviation).sum()
    }
}

/// Log-density of `x` under `params`.
pub fn log_density(x: &DMatrix<f64>, params: &MatNormParams) -> Result<f64> {
    let factors = params.factorize()?;
    log_density_with(x, params, &factors)
}

/// Log-density using already computed factors.
pub fn log_density_with(x: &DMatrix<f64>, params: &MatNormParams, factors: &MatNormFactors) -> Result<f64> {
    if x.shape() != params.mean.shape() {
        return Err(Error::Dimension(format!(
            "x is {:?}, mean is {:?}",
            x.shape(),
            params.mean.shape()
        )));
    }
    let deviation = x - &params.mean;
    Ok(factors.log_normalizer() - 0.5 * factors.quadratic_form(&deviation))
}

/// Draws `M + L_Φ Z L_Ωᵀ` with `Z` filled row by row with standard normals.
pub fn sample<R: Rng + ?Sized>(params: &MatNormParams, rng: &mut R) -> Result<DMatrix<f64>> {
    let factors = params.factorize()?;
    Ok(sample_with(params, &factors, rng))
}

pub fn sample_with<R: Rng + ?Sized>(params: &MatNormParams, factors: &MatNormFactors, rng: &mut R) -> DMatrix<f64> {
    let (r, p) = (params.r(), params.p());
    let z: Vec<f64> = (0..r * p).map(|_| rng.sample(StandardNormal)).collect();
    let z = DMatrix::from_row_slice(r, p, &z);
    &params.mean + &factors.phi.lower * z * factors.omega.lower.transpose()
}

/// Kronecker product `A ⊗ B`; block `(i, j)` is `A[i,j]·B`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
