//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

use mvpln_core::mvpln::ln_factorial;

/// Orthonormal Hermite values `p_0(x) .. p_n(x)` for the weight `e^{-x²}`.
fn hermite_orthonormal(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = std::f64::consts::PI.powf(-0.25);
    if n >= 1 {
        p[1] = std::f64::consts::SQRT_2 * x * p[0];
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
    }
    p
}

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx`. Nodes start from
/// the Jacobi matrix eigenvalues and are polished by Newton; weights use the
/// Christoffel form `1 / Σ p_k(x)²`, which keeps relative accuracy in the tails.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let weights = nodes
        .iter_mut()
        .map(|x| {
            for _ in 0..3 {
                let p = hermite_orthonormal(n, *x);
                *x -= p[n] / ((2.0 * n as f64).sqrt() * p[n - 1]);
            }
            let p = hermite_orthonormal(n, *x);
            1.0 / p[..n].iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    (nodes, weights)
}

/// Log of the joint density `Poisson(y | e^{θ+ls}) · N(θ | μ, σ²)`.
pub fn log_joint(theta: f64, y: f64, log_s: f64, mu: f64, var: f64) -> f64 {
    let eta = theta + log_s;
    y * eta
        - eta.exp()
        - ln_factorial(y)
        - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
        - 0.5 * (theta - mu).powi(2) / var
}

/// Mode and curvature of the 1-D log joint, by bisection on the derivative.
fn mode_and_scale(y: f64, log_s: f64, mu: f64, var: f64) -> (f64, f64) {
    let deriv = |t: f64| y - (t + log_s).exp() - (t - mu) / var;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let curvature = (mode + log_s).exp() + 1.0 / var;
    (mode, 1.0 / curvature.sqrt())
}

/// Adaptive Gauss–Hermite estimates of `log ∫ p(y, θ) dθ` and the posterior
/// mean and variance of `θ`, for `r = p = 1`.
pub struct Quadrature {
    pub log_marginal: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn quadrature(nodes: usize, y: f64, log_s: f64, mu: f64, var: f64) -> Quadrature {
    let (x, w) = gauss_hermite(nodes);
    let (mode, scale) = mode_and_scale(y, log_s, mu, var);
    let thetas: Vec<f64> = x
        .iter()
        .map(|xi| mode + std::f64::consts::SQRT_2 * scale * xi)
        .collect();
    let logs: Vec<f64> = thetas
        .iter()
        .zip(&x)
        .zip(&w)
        .map(|((t, xi), wi)| wi.ln() + xi * xi + log_joint(*t, y, log_s, mu, var))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = thetas.iter().zip(&weights).map(|(t, w)| t * w).sum::<f64>() / total;
    let second = thetas.iter().zip(&weights).map(|(t, w)| t * t * w).sum::<f64>() / total;
    Quadrature {
        log_marginal: max + (total * std::f64::consts::SQRT_2 * scale).ln(),
        mean,
        variance: second - mean * mean,
    }
}

/// Random SPD matrix `A Aᵀ + δI` from a caller-supplied entry generator.
pub fn spd_from(dim: usize, mut entry: impl FnMut() -> f64, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| entry());
    let m = &a * a.transpose() + DMatrix::identity(dim, dim) * ridge;
    (&m + m.transpose()) * 0.5
}
