//! Reference implementations that share no code with `mvpln-core`: dense
//! Kronecker normal densities, adaptive Gauss–Hermite marginals for the
//! scalar Poisson-log normal, pair-counting ARI and closed-form
//! Poisson-log normal moments. The acceptance suite checks the library
//! against these.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `A ⊗ B` as a dense matrix.
pub fn dense_kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Multivariate normal log-density through a dense Cholesky factor.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let chol = cov.clone().cholesky().expect("positive definite covariance");
    let dev = x - mean;
    let sol = chol.solve(&dev);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + dev.dot(&sol))
}

/// Row-major vectorization of a matrix.
pub fn row_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.len(),
        (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |k| m[(i, k)])),
    )
}

/// Random SPD matrix `A Aᵀ + δI` from a caller-supplied entry generator.
pub fn spd_from(dim: usize, mut entry: impl FnMut() -> f64, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| entry());
    let m = &a * a.transpose() + DMatrix::identity(dim, dim) * ridge;
    (&m + m.transpose()) * 0.5
}

/// `ln y!` by direct summation.
pub fn ln_factorial(y: u64) -> f64 {
    (2..=y).map(|k| (k as f64).ln()).sum()
}

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

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx`. Nodes are the
/// Jacobi matrix eigenvalues polished by Newton; weights use the
/// Christoffel form `1 / Σ p_k(x)²`.
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

/// `log [Poisson(y | e^{θ+ls}) · N(θ | μ, σ²)]`.
fn log_joint(theta: f64, y: u64, log_s: f64, mu: f64, var: f64) -> f64 {
    let eta = theta + log_s;
    y as f64 * eta
        - eta.exp()
        - ln_factorial(y)
        - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
        - 0.5 * (theta - mu).powi(2) / var
}

/// Mode and curvature scale of the log joint, by bisection on its derivative.
fn mode_and_scale(y: u64, log_s: f64, mu: f64, var: f64) -> (f64, f64) {
    let deriv = |t: f64| y as f64 - (t + log_s).exp() - (t - mu) / var;
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

/// `log ∫ Poisson(y | e^{θ+ls}) N(θ | μ, σ²) dθ` by Gauss–Hermite with
/// `nodes` points, centred and scaled at the integrand's mode.
pub fn scalar_log_marginal(nodes: usize, y: u64, log_s: f64, mu: f64, var: f64) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let (mode, scale) = mode_and_scale(y, log_s, mu, var);
    let logs: Vec<f64> = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| {
            let theta = mode + std::f64::consts::SQRT_2 * scale * xi;
            wi.ln() + xi * xi + log_joint(theta, y, log_s, mu, var)
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + (total * std::f64::consts::SQRT_2 * scale).ln()
}

/// ARI from pair counts: `a` together in both, `b` only in the first, `c`
/// only in the second, `d` apart in both. Two single-block or two
/// all-singleton partitions score 1.
pub fn pair_count_ari(x: &[usize], y: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

/// Every labelling of `n` items with labels `0..k`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % k;
                    code /= k;
                    l
                })
                .collect()
        })
        .collect()
}

/// Raw moments `E[Y^k]`, `k = 1..4`, of `Y | θ ~ Poisson(e^θ)` with
/// `θ ~ N(μ, σ²)`, from the Stirling expansion `E[Y^k] = Σ S(k, j) E[e^{jθ}]`.
pub fn poisson_lognormal_raw_moments(mu: f64, var: f64) -> [f64; 4] {
    let l = |j: f64| (j * mu + j * j * var / 2.0).exp();
    let (l1, l2, l3, l4) = (l(1.0), l(2.0), l(3.0), l(4.0));
    [l1, l2 + l1, l3 + 3.0 * l2 + l1, l4 + 6.0 * l3 + 7.0 * l2 + l1]
}

/// Mean, variance and fourth central moment from the first four raw moments.
pub fn central_moments(raw: [f64; 4]) -> (f64, f64, f64) {
    let [e1, e2, e3, e4] = raw;
    let var = e2 - e1 * e1;
    let m4 = e4 - 4.0 * e3 * e1 + 6.0 * e2 * e1 * e1 - 3.0 * e1.powi(4);
    (e1, var, m4)
}
