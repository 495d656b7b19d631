//! Convergence diagnostics for MCMC chains and for the EM log-likelihood
//! trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{coordinate_draws, Chain, ChainSet};

/// Chains pass when every coordinate's PSRF is below this value...
pub const PSRF_THRESHOLD: f64 = 1.1;
/// ...and every coordinate's ESS is above this one.
pub const ESS_THRESHOLD: f64 = 100.0;
/// Upper clamp on ESS relative to the total number of draws.
pub const ESS_MAX_RATIO: f64 = 1.25;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn equal_lengths<C: AsRef<[f64]>>(chains: &[C]) -> Result<usize> {
    let n = chains.first().map_or(0, |c| c.as_ref().len());
    if chains.iter().any(|c| c.as_ref().len() != n) {
        return Err(Error::InvalidArgument("chains differ in length".into()));
    }
    Ok(n)
}

/// Between-chain and within-chain variance summary shared by PSRF and ESS.
struct VarianceParts {
    means: Vec<f64>,
    within: f64,
    var_plus: f64,
}

fn variance_parts<C: AsRef<[f64]>>(chains: &[C], n: usize) -> VarianceParts {
    let means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| sample_variance(c.as_ref(), m))
        .sum::<f64>()
        / chains.len() as f64;
    let between_over_n = if chains.len() > 1 {
        sample_variance(&means, mean(&means))
    } else {
        0.0
    };
    let nf = n as f64;
    VarianceParts {
        means,
        within,
        var_plus: (nf - 1.0) / nf * within + between_over_n,
    }
}

/// Gelman–Rubin potential scale reduction factor over `m ≥ 2` chains of
/// equal length `N ≥ 2`.
///
/// Returns exactly 1 when every draw is identical and `+∞` when chains are
/// individually constant but disagree.
pub fn psrf<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    let n = equal_lengths(chains)?;
    if chains.len() < 2 || n < 2 {
        return Err(Error::InvalidArgument("psrf needs at least 2 chains of 2 draws".into()));
    }
    let parts = variance_parts(chains, n);
    if parts.within == 0.0 {
        let first = parts.means[0];
        return Ok(if parts.means.iter().all(|&m| m == first) {
            1.0
        } else {
            f64::INFINITY
        });
    }
    Ok((parts.var_plus / parts.within).sqrt())
}

/// Biased autocovariance at `lag` of a chain with mean `m`.
fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone positive
/// sequence truncation. Needs `m ≥ 1` chains of `N ≥ 4` draws.
pub fn ess<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    let n = equal_lengths(chains)?;
    if chains.is_empty() || n < 4 {
        return Err(Error::InvalidArgument("ess needs at least one chain of 4 draws".into()));
    }
    let m = chains.len();
    let total = (m * n) as f64;
    let parts = variance_parts(chains, n);
    if parts.var_plus == 0.0 || parts.within == 0.0 {
        return Ok(total);
    }
    let rho = |lag: usize| -> f64 {
        let acov = chains
            .iter()
            .zip(&parts.means)
            .map(|(c, &mu)| autocovariance(c.as_ref(), mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (parts.within - acov) / parts.var_plus
    };
    let mut tau = -1.0;
    let mut previous = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let even = if k == 0 { 1.0 } else { rho(2 * k) };
        let pair = even + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(previous);
        tau += 2.0 * pair;
        previous = pair;
        k += 1;
    }
    let cap = ESS_MAX_RATIO * total;
    if tau <= 0.0 {
        return Ok(cap);
    }
    Ok((total / tau).min(cap))
}

/// Per-coordinate PSRF and ESS of one chain set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub psrf: Vec<f64>,
    pub ess: Vec<f64>,
    pub passed: bool,
}

impl ChainDiagnostics {
    pub fn max_psrf(&self) -> f64 {
        self.psrf.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Applies [`psrf`] and [`ess`] to every coordinate; passes when the largest
/// PSRF is below 1.1 and the smallest ESS above 100.
pub fn check_chains(chains: &ChainSet) -> Result<ChainDiagnostics> {
    check_draws(&chains.chains, chains.dim())
}

/// As [`check_chains`] for raw chains of `dim`-dimensional draws.
pub fn check_draws(chains: &[Chain], dim: usize) -> Result<ChainDiagnostics> {
    let mut psrf_values = Vec::with_capacity(dim);
    let mut ess_values = Vec::with_capacity(dim);
    for c in 0..dim {
        let coord = coordinate_draws(chains, dim, c);
        psrf_values.push(psrf(&coord)?);
        ess_values.push(ess(&coord)?);
    }
    let max_psrf = psrf_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ess = ess_values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ChainDiagnostics {
        passed: max_psrf < PSRF_THRESHOLD && min_ess > ESS_THRESHOLD,
        psrf: psrf_values,
        ess: ess_values,
    })
}

/// Outcome of the Heidelberger–Welch stationarity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityResult {
    pub passed: bool,
    /// Statistic of the last window tested.
    pub cvm_statistic: f64,
    /// Share of the series dropped from the front for the last window tested.
    pub discarded_prefix_fraction: f64,
    /// Set when the test stopped because a window held fewer than 10 values.
    pub too_short: bool,
}

/// Minimum window length for the stationarity test.
pub const MIN_SERIES_LEN: usize = 10;

/// Zero-frequency spectral density with a Bartlett window of lag `⌊√L⌋`.
pub fn spectral_density_zero(x: &[f64]) -> f64 {
    let n = x.len();
    let lags = ((n as f64).sqrt().floor() as usize).min(n - 1);
    let m = mean(x);
    let mut s0 = autocovariance(x, m, 0);
    for h in 1..=lags {
        s0 += 2.0 * (1.0 - h as f64 / (lags as f64 + 1.0)) * autocovariance(x, m, h);
    }
    s0
}

/// Cramér–von Mises statistic of the scaled cumulative-sum bridge.
pub fn cvm_statistic(x: &[f64]) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        return 0.0;
    }
    let n = x.len() as f64;
    let s0 = spectral_density_zero(x);
    if !(s0 > 0.0) {
        return f64::INFINITY;
    }
    let m = mean(x);
    let mut cumulative = 0.0;
    let mut total = 0.0;
    for &v in x {
        cumulative += v - m;
        total += cumulative * cumulative;
    }
    total / (n * n * s0)
}

/// Heidelberger–Welch stationarity test at level `alpha`, dropping 10% of
/// the series at a time (up to 50%) until a window passes.
pub fn heidelberger_welch(series: &[f64], alpha: f64) -> StationarityResult {
    let critical = cvm_critical_value(alpha);
    let len = series.len();
    let mut last = StationarityResult {
        passed: false,
        cvm_statistic: f64::NAN,
        discarded_prefix_fraction: 0.0,
        too_short: len < MIN_SERIES_LEN,
    };
    for step in 0..=5usize {
        let start = step * len / 10;
        let window = &series[start..];
        if window.len() < MIN_SERIES_LEN {
            last.too_short = true;
            break;
        }
        let stat = cvm_statistic(window);
        last.cvm_statistic = stat;
        last.discarded_prefix_fraction = step as f64 / 10.0;
        if stat < critical {
            last.passed = true;
            break;
        }
    }
    last
}

/// Modified Bessel function of the second kind, `K_ν(x)` for `x > 0`, from
/// `∫₀^∞ exp(−x cosh t) cosh(νt) dt`.
fn bessel_k(nu: f64, x: f64) -> f64 {
    // the integrand is negligible once x·cosh t exceeds x + 60
    let t_max = ((60.0 + x) / x).acosh() + 1.0;
    let steps = ((t_max / 0.005).ceil() as usize).max(200);
    let h = t_max / steps as f64;
    let f = |t: f64| (-x * t.cosh() + x).exp() * (nu * t).cosh();
    let mut sum = 0.5 * (f(0.0) + f(t_max));
    for i in 1..steps {
        sum += f(i as f64 * h);
    }
    sum * h * (-x).exp()
}

/// Distribution function of the Cramér–von Mises statistic of a Brownian
/// bridge (series truncated at four terms, terms below `1e-5` dropped).
pub fn cvm_cdf(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let log_eps = (1e-5f64).ln();
    let pi15 = std::f64::consts::PI.powf(1.5);
    (0..4)
        .map(|k| {
            let kf = k as f64;
            let u = (4.0 * kf + 1.0).powi(2) / (16.0 * q);
            if u > -log_eps {
                return 0.0;
            }
            let z =
                (libm::lgamma(kf + 0.5) - libm::lgamma(kf + 1.0)).exp() * (4.0 * kf + 1.0).sqrt() / (pi15 * q.sqrt());
            z * (-u).exp() * bessel_k(0.25, u)
        })
        .sum()
}

/// Upper `alpha` quantile of the Cramér–von Mises distribution.
pub fn cvm_critical_value(alpha: f64) -> f64 {
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (1e-3, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cvm_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
