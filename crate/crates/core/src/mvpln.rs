//! The MVPLN distribution layer.
//!
//! For one unit with vectorized counts `y`, library sizes `s` and latent
//! matrix `θ`, the (unnormalized) log posterior is
//!
//! ```text
//! Σ_c [ y_c (θ_c + log s_c) − exp(θ_c + log s_c) ] + log N_{r×p}(θ | M, Φ, Ω)
//! ```
//!
//! It is strictly concave in `θ`, so Newton's method finds the mode reliably
//! and the Laplace approximation of the marginal likelihood is well posed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matnorm::{self, MatNormFactors, MatNormParams};
use crate::sampler::GradientTarget;
use crate::tensor_io::{devectorize, vectorize_unit, LibrarySizes};

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;
/// Half the Newton decrement below which the mode is resolved to machine
/// precision even if the raw gradient is not (tight priors scale it up).
const NEWTON_DECREMENT_TOL: f64 = 1e-18;
/// Half decrement below which Newton steps skip the ascent check.
const NEWTON_LOCAL_DECREMENT: f64 = 1e-8;

/// `ln(y!)`.
pub fn ln_factorial(y: f64) -> f64 {
    libm::lgamma(y + 1.0)
}

/// The latent log posterior of one unit under one component, with all
/// per-evaluation constants precomputed. Vectors are row-major `r·p`.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    r: usize,
    p: usize,
    y: Vec<f64>,
    log_s: Vec<f64>,
    mean: Vec<f64>,
    phi_inv: Vec<f64>,
    omega_inv: Vec<f64>,
    log_normalizer: f64,
    log_factorial_sum: f64,
    scratch_dev: Vec<f64>,
    scratch_left: Vec<f64>,
}

impl LatentPosterior {
    pub fn new(
        y: &[f64],
        library_sizes: &LibrarySizes,
        params: &MatNormParams,
        factors: &MatNormFactors,
    ) -> Result<Self> {
        let (r, p) = (params.r(), params.p());
        let rp = r * p;
        if y.len() != rp {
            return Err(Error::Dimension(format!("{} counts for r*p = {rp}", y.len())));
        }
        library_sizes.check_len(rp)?;
        Ok(LatentPosterior {
            r,
            p,
            y: y.to_vec(),
            log_s: library_sizes.log_values(),
            mean: vectorize_unit(&params.mean),
            phi_inv: linalg::to_row_major(&factors.phi.inverse),
            omega_inv: linalg::to_row_major(&factors.omega.inverse),
            log_normalizer: factors.log_normalizer(),
            log_factorial_sum: y.iter().map(|&v| ln_factorial(v)).sum(),
            scratch_dev: vec![0.0; rp],
            scratch_left: vec![0.0; rp],
        })
    }

    pub fn rp(&self) -> usize {
        self.r * self.p
    }

    /// `Σ_c ln(y_c!)`, the θ-free constant left out of the posterior.
    pub fn log_factorial_sum(&self) -> f64 {
        self.log_factorial_sum
    }

    /// Computes `Φ⁻¹ (θ − M) Ω⁻¹` into `out` and returns the trace form.
    fn prior_term(&mut self, theta: &[f64], out: &mut [f64]) -> f64 {
        let (r, p) = (self.r, self.p);
        for ((d, t), m) in self.scratch_dev.iter_mut().zip(theta).zip(&self.mean) {
            *d = t - m;
        }
        for i in 0..r {
            for k in 0..p {
                let mut acc = 0.0;
                for l in 0..r {
                    acc += self.phi_inv[i * r + l] * self.scratch_dev[l * p + k];
                }
                self.scratch_left[i * p + k] = acc;
            }
        }
        let mut quad = 0.0;
        for i in 0..r {
            for k in 0..p {
                let mut acc = 0.0;
                for l in 0..p {
                    acc += self.scratch_left[i * p + l] * self.omega_inv[l * p + k];
                }
                out[i * p + k] = acc;
                quad += acc * self.scratch_dev[i * p + k];
            }
        }
        quad
    }

    /// Log posterior (without `Σ ln y!`) and its gradient.
    pub fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let quad = self.prior_term(theta, grad);
        let mut poisson = 0.0;
        for c in 0..theta.len() {
            let eta = theta[c] + self.log_s[c];
            let rate = eta.exp();
            poisson += self.y[c] * eta - rate;
            grad[c] = self.y[c] - rate - grad[c];
        }
        poisson + self.log_normalizer - 0.5 * quad
    }

    pub fn value(&mut self, theta: &[f64]) -> f64 {
        let mut grad = vec![0.0; theta.len()];
        self.value_and_grad(theta, &mut grad)
    }

    /// Negated Hessian `diag(exp(θ + log s)) + Φ⁻¹ ⊗ Ω⁻¹` (row-major vec).
    pub fn negative_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let (r, p) = (self.r, self.p);
        let rp = r * p;
        let mut h = DMatrix::zeros(rp, rp);
        for i in 0..r {
            for k in 0..p {
                for i2 in 0..r {
                    for k2 in 0..p {
                        h[(i * p + k, i2 * p + k2)] = self.phi_inv[i * r + i2] * self.omega_inv[k * p + k2];
                    }
                }
            }
        }
        for c in 0..rp {
            h[(c, c)] += (theta[c] + self.log_s[c]).exp();
        }
        h
    }

    /// Newton's method with step halving for the posterior mode.
    pub fn find_mode(&mut self) -> Result<LaplaceFit> {
        let rp = self.rp();
        let from_data: Vec<f64> = self
            .y
            .iter()
            .zip(&self.log_s)
            .map(|(y, ls)| (y + 0.5).ln() - ls)
            .collect();
        let from_prior = self.mean.clone();
        let mut theta = if self.value(&from_data) > self.value(&from_prior) {
            from_data
        } else {
            from_prior
        };
        let mut grad = vec![0.0; rp];
        let mut value = self.value_and_grad(&theta, &mut grad);
        let mut trial_grad = vec![0.0; rp];
        for _ in 0..NEWTON_MAX_ITER {
            let h = self.negative_hessian(&theta);
            let chol = h.cholesky().ok_or(Error::NewtonFailed {
                grad_norm: max_abs(&grad),
            })?;
            let step = chol.solve(&DVector::from_column_slice(&grad));
            let decrement = step.dot(&DVector::from_column_slice(&grad));
            if max_abs(&grad) < NEWTON_GRAD_TOL || 0.5 * decrement < NEWTON_DECREMENT_TOL {
                let lower = chol.l();
                return Ok(self.laplace_at(theta, value, lower));
            }
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
                let trial_value = self.value_and_grad(&trial, &mut trial_grad);
                // near the mode the possible gain is below the rounding noise
                // of the value, so the full step is taken unchecked
                let local = 0.5 * decrement < NEWTON_LOCAL_DECREMENT && scale == 1.0;
                if trial_value.is_finite() && (local || trial_value >= value) {
                    theta = trial;
                    value = trial_value;
                    std::mem::swap(&mut grad, &mut trial_grad);
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                // no representable ascent: the mode is resolved to rounding
                if 0.5 * decrement < 1e-12 {
                    return Ok(self.laplace_at(theta, value, chol.l()));
                }
                return Err(Error::NewtonFailed {
                    grad_norm: max_abs(&grad),
                });
            }
        }
        Err(Error::NewtonFailed {
            grad_norm: max_abs(&grad),
        })
    }

    fn laplace_at(&self, mode: Vec<f64>, value: f64, lower: DMatrix<f64>) -> LaplaceFit {
        let rp = mode.len();
        let log_det: f64 = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_lik =
            value - self.log_factorial_sum + 0.5 * rp as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        LaplaceFit {
            mode,
            hessian_lower: linalg::to_row_major(&lower),
            log_lik,
        }
    }
}

impl GradientTarget for LatentPosterior {
    fn dim(&self) -> usize {
        self.rp()
    }

    fn log_density_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.value_and_grad(x, grad)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Mode of the latent posterior, the Cholesky factor of the negated Hessian
/// there, and the Laplace estimate of the unit's log marginal likelihood.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub mode: Vec<f64>,
    /// Row-major lower-triangular `L` with `H = L Lᵀ`.
    pub hessian_lower: Vec<f64>,
    pub log_lik: f64,
}

impl LaplaceFit {
    /// Laplace covariance `H⁻¹` of the latent posterior.
    pub fn covariance(&self) -> DMatrix<f64> {
        let rp = self.mode.len();
        let l = DMatrix::from_row_slice(rp, rp, &self.hessian_lower);
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(rp, rp))
            .expect("factor has a positive diagonal");
        linalg::symmetrize(&(l_inv.transpose() * l_inv))
    }
}

/// How a unit's marginal log-likelihood is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMethod {
    Laplace,
    /// Average of the Poisson likelihood over iid prior draws. Only suited
    /// to validation.
    McPrior {
        draws: usize,
        seed: u64,
    },
}

fn check_unit(y: &DMatrix<f64>, params: &MatNormParams) -> Result<Vec<f64>> {
    if y.shape() != params.mean.shape() {
        return Err(Error::Dimension(format!(
            "counts are {:?}, mean is {:?}",
            y.shape(),
            params.mean.shape()
        )));
    }
    Ok(vectorize_unit(y))
}

/// Unnormalized latent log posterior at `theta`; `Σ ln y!` is omitted.
pub fn latent_log_posterior(
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
) -> Result<f64> {
    let yv = check_unit(y, params)?;
    if theta.shape() != y.shape() {
        return Err(Error::Dimension("theta and counts differ in shape".into()));
    }
    let factors = params.factorize()?;
    let mut post = LatentPosterior::new(&yv, library_sizes, params, &factors)?;
    Ok(post.value(&vectorize_unit(theta)))
}

/// Gradient of [`latent_log_posterior`]:
/// `Y − exp(θ + log S) − Φ⁻¹ (θ − M) Ω⁻¹`.
pub fn latent_log_posterior_grad(
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
) -> Result<DMatrix<f64>> {
    let yv = check_unit(y, params)?;
    if theta.shape() != y.shape() {
        return Err(Error::Dimension("theta and counts differ in shape".into()));
    }
    let factors = params.factorize()?;
    let mut post = LatentPosterior::new(&yv, library_sizes, params, &factors)?;
    let mut grad = vec![0.0; yv.len()];
    post.value_and_grad(&vectorize_unit(theta), &mut grad);
    Ok(devectorize(&grad, params.r(), params.p()))
}

/// Monte Carlo estimate of a log marginal likelihood with its delta-method
/// standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub log_lik: f64,
    pub std_error: f64,
}

/// Averages the Poisson likelihood over `draws` prior samples of `θ`.
pub fn mc_prior_log_likelihood(
    y: &DMatrix<f64>,
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let yv = check_unit(y, params)?;
    library_sizes.check_len(yv.len())?;
    if draws == 0 {
        return Err(Error::InvalidArgument("mc-prior needs at least one draw".into()));
    }
    let factors = params.factorize()?;
    let log_s = library_sizes.log_values();
    let log_fact: f64 = yv.iter().map(|&v| ln_factorial(v)).sum();
    let mut rng = crate::seed::rng_from_seed(seed);
    let log_w: Vec<f64> = (0..draws)
        .map(|_| {
            let theta = vectorize_unit(&matnorm::sample_with(params, &factors, &mut rng));
            theta
                .iter()
                .zip(&log_s)
                .zip(&yv)
                .map(|((t, ls), y)| {
                    let eta = t + ls;
                    y * eta - eta.exp()
                })
                .sum::<f64>()
                - log_fact
        })
        .collect();
    let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - shift).exp()).collect();
    let n = draws as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = if draws > 1 {
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        log_lik: shift + mean.ln(),
        std_error: (var / n).sqrt() / mean,
    })
}

/// Approximate log marginal likelihood of one unit under one component.
pub fn unit_log_likelihood(
    y: &DMatrix<f64>,
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
    method: LikelihoodMethod,
) -> Result<f64> {
    match method {
        LikelihoodMethod::Laplace => {
            let yv = check_unit(y, params)?;
            let factors = params.factorize()?;
            let mut post = LatentPosterior::new(&yv, library_sizes, params, &factors)?;
            Ok(post.find_mode()?.log_lik)
        }
        LikelihoodMethod::McPrior { draws, seed } => {
            Ok(mc_prior_log_likelihood(y, library_sizes, params, draws, seed)?.log_lik)
        }
    }
}

/// Laplace fit of a unit given vectorized counts and prefactored params.
pub fn laplace_fit(
    y: &[f64],
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
    factors: &MatNormFactors,
) -> Result<LaplaceFit> {
    LatentPosterior::new(y, library_sizes, params, factors)?.find_mode()
}

/// Elementwise unconditional mean and variance of the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

/// `E(Y_ik) = exp(μ_ik + Φ_ii Ω_kk / 2)` and
/// `Var(Y_ik) = E + E² (exp(Φ_ii Ω_kk) − 1)`, with unit library sizes.
pub fn mvpln_moments(params: &MatNormParams) -> MomentPair {
    let (r, p) = (params.r(), params.p());
    let mean = DMatrix::from_fn(r, p, |i, k| {
        (params.mean[(i, k)] + 0.5 * params.phi[(i, i)] * params.omega[(k, k)]).exp()
    });
    let variance = DMatrix::from_fn(r, p, |i, k| {
        let m = mean[(i, k)];
        m + m * m * (params.phi[(i, i)] * params.omega[(k, k)]).exp_m1()
    });
    MomentPair { mean, variance }
}

/// Draws a count matrix from the MVPLN hierarchy.
pub fn sample_counts<R: Rng + ?Sized>(
    params: &MatNormParams,
    factors: &MatNormFactors,
    log_s: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    let theta = vectorize_unit(&matnorm::sample_with(params, factors, rng));
    theta
        .iter()
        .zip(log_s)
        .map(|(t, ls)| {
            let eta = t + ls;
            if eta > 700.0 {
                return Err(Error::PoissonOverflow(eta));
            }
            Ok(poisson(eta.exp(), rng))
        })
        .collect()
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let dist = rand_distr::Poisson::new(rate).expect("finite positive rate");
    rng.sample(dist) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::StandardNormal;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_params(mu: f64, var: f64) -> MatNormParams {
        MatNormParams::new(scalar(mu), scalar(var), scalar(1.0)).unwrap()
    }

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

    #[test]
    fn log_posterior_examples() {
        let s = LibrarySizes::unit(1);
        let params = scalar_params(0.0, 1.0);
        let v = latent_log_posterior(&scalar(0.0), &scalar(0.0), &s, &params).unwrap();
        assert!((v - (-1.0 - HALF_LN_2PI)).abs() < 1e-12);
        assert!((v + 1.918_938_5).abs() < 1e-7);

        let l2 = 2f64.ln();
        let v = latent_log_posterior(&scalar(l2), &scalar(2.0), &s, &params).unwrap();
        let want = 2.0 * l2 - 2.0 - HALF_LN_2PI - 0.5 * l2 * l2;
        assert!((v - want).abs() < 1e-12);
        assert!((v + 1.772_871).abs() < 1e-6);
    }

    #[test]
    fn log_posterior_matches_term_by_term_sum() {
        let mut rng = rng_from_seed(8);
        let params = MatNormParams::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.6, -0.2, -0.2, 0.9]),
        )
        .unwrap();
        let s = LibrarySizes::new(vec![0.8, 1.1, 1.3, 0.9]).unwrap();
        let y = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 7.0, 12.0]);
        for _ in 0..10 {
            let theta = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let got = latent_log_posterior(&theta, &y, &s, &params).unwrap();
            let mut want = matnorm::log_density(&theta, &params).unwrap();
            for i in 0..2 {
                for k in 0..2 {
                    let eta = theta[(i, k)] + s.values()[i * 2 + k].ln();
                    want += y[(i, k)] * eta - eta.exp();
                }
            }
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        let s = LibrarySizes::unit(1);
        let params = scalar_params(0.0, 1.0);
        let g = latent_log_posterior_grad(&scalar(0.0), &scalar(2.0), &s, &params).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);

        // stationary point of −e^θ − θ, found by bisection
        let (mut lo, mut hi) = (-1.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if -mid.exp() - mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root + 0.567_143_3).abs() < 1e-7);
        let g = latent_log_posterior_grad(&scalar(root), &scalar(0.0), &s, &params).unwrap();
        assert!(g[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn negated_hessian_is_positive_definite() {
        let mut rng = rng_from_seed(21);
        let params = MatNormParams::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.5, -1.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.55, -0.55, 1.27]),
            DMatrix::from_row_slice(3, 3, &[1.66, -0.61, 0.77, -0.61, 1.46, 0.17, 0.77, 0.17, 1.44]),
        )
        .unwrap();
        let factors = params.factorize().unwrap();
        let s = LibrarySizes::unit(6);
        let y = [4.0, 0.0, 9.0, 1.0, 0.0, 30.0];
        let post = LatentPosterior::new(&y, &s, &params, &factors).unwrap();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..6).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            assert!(post.negative_hessian(&theta).cholesky().is_some());
        }
    }

    #[test]
    fn laplace_collapses_to_poisson_under_point_prior() {
        let s = LibrarySizes::unit(1);
        let mu = 1.2f64;
        let params = scalar_params(mu, 1e-8);
        for y in [0.0, 1.0, 3.0, 10.0] {
            let v = unit_log_likelihood(&scalar(y), &s, &params, LikelihoodMethod::Laplace).unwrap();
            let lambda = mu.exp();
            let want = y * mu - lambda - ln_factorial(y);
            assert!((v - want).abs() < 1e-4, "y={y}: {v} vs {want}");
        }
    }

    #[test]
    fn laplace_mode_is_stationary() {
        let params = MatNormParams::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
        .unwrap();
        let factors = params.factorize().unwrap();
        let s = LibrarySizes::new(vec![1.0, 2.0, 0.5, 1.0]).unwrap();
        let y = [5.0, 0.0, 2.0, 40.0];
        let mut post = LatentPosterior::new(&y, &s, &params, &factors).unwrap();
        let fit = post.find_mode().unwrap();
        let mut grad = vec![0.0; 4];
        post.value_and_grad(&fit.mode, &mut grad);
        assert!(max_abs(&grad) < 1e-8);
        let cov = fit.covariance();
        let h = post.negative_hessian(&fit.mode);
        assert!((h * cov - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn moments_examples() {
        let m = mvpln_moments(&scalar_params(0.0, 1.0));
        assert!((m.mean[(0, 0)] - 0.5f64.exp()).abs() < 1e-14);
        assert!((m.mean[(0, 0)] - 1.64872).abs() < 1e-5);
        assert!((m.variance[(0, 0)] - 6.319_495_5).abs() < 1e-6);

        let m = mvpln_moments(&scalar_params(0.7, 1e-14));
        assert!((m.variance[(0, 0)] - m.mean[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn overflowing_rates_are_rejected() {
        let params = scalar_params(701.0, 1e-12);
        let factors = params.factorize().unwrap();
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            sample_counts(&params, &factors, &[0.0], &mut rng),
            Err(Error::PoissonOverflow(_))
        ));
    }
}
