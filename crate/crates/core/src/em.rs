//! Monte Carlo EM for finite mixtures of matrix variate Poisson-log normal
//! distributions.
//!
//! The E-step samples every latent matrix `θ_jg` with [`crate::sampler`] and
//! keeps only the first two empirical moments of the retained draws, which is
//! all the M-step formulas consume. Responsibilities use the Laplace marginal
//! likelihood of each unit.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_chains, heidelberger_welch};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::matnorm::{MatNormFactors, MatNormParams};
use crate::mvpln::{LaplaceFit, LatentPosterior};
use crate::sampler::{grow, sample_latent_from, ChainConfig, ChainSet};
use crate::seed::{derive_seed, hash_label};
use crate::tensor_io::{devectorize, vectorize_unit, CountTensor, LibrarySizes};

/// Allowed deviation of a responsibility row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// Posterior membership probabilities, one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Responsibilities {
    rows: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let g = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || g == 0 {
            return Err(Error::Dimension(
                "responsibilities need at least one row and column".into(),
            ));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != g {
                return Err(Error::Dimension(format!(
                    "row {j} has {} entries, expected {g}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("row {j} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {j} sums to {sum}")));
            }
        }
        Ok(Responsibilities { rows })
    }

    /// One-hot rows from hard labels in `0..g`.
    pub fn from_labels(labels: &[usize], g: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= g) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{g}")));
        }
        Self::new(
            labels
                .iter()
                .map(|&l| (0..g).map(|k| if k == l { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Normalizes rows of log weights with the log-sum-exp shift.
    pub fn from_log_weights(log_weights: Vec<Vec<f64>>) -> Result<Self> {
        let rows = log_weights
            .into_iter()
            .enumerate()
            .map(|(j, row)| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(Error::InvalidArgument(format!("unit {j} has no finite log weight")));
                }
                let exps: Vec<f64> = row.iter().map(|w| (w - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                Ok(exps.into_iter().map(|e| e / total).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(rows)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn g(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, j: usize, g: usize) -> f64 {
        self.rows[j][g]
    }

    /// `n_g = Σ_j z_jg` for every component.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.g()];
        for row in &self.rows {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// MAP component of every unit; ties go to the smallest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|row| {
                let mut best = 0;
                for (g, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }

    /// Reorders units; `order[k]` is the old index of new unit `k`.
    pub fn permute_units(&self, order: &[usize]) -> Self {
        Responsibilities {
            rows: order.iter().map(|&j| self.rows[j].clone()).collect(),
        }
    }

    /// Reorders components; `order[k]` is the old index of new component `k`.
    pub fn permute_components(&self, order: &[usize]) -> Self {
        Responsibilities {
            rows: self
                .rows
                .iter()
                .map(|row| order.iter().map(|&g| row[g]).collect())
                .collect(),
        }
    }
}

/// Empirical mean and covariance (divisor `N`) of one unit's latent draws,
/// row-major vectorized. Together they reproduce every Monte Carlo average
/// of a quadratic function of the draws exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub mean: Vec<f64>,
    /// Row-major `rp × rp`.
    pub covariance: Vec<f64>,
    /// Number of draws summarized; 0 for a Laplace approximation.
    pub draws: usize,
}

impl LatentMoments {
    /// Moments of vectorized draws, each of length `dim`.
    pub fn from_flat_draws<'a>(dim: usize, draws: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for d in draws.clone() {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
            count += 1;
        }
        let nf = count as f64;
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut covariance = vec![0.0; dim * dim];
        let mut dev = vec![0.0; dim];
        for d in draws {
            for ((e, v), m) in dev.iter_mut().zip(d).zip(&mean) {
                *e = v - m;
            }
            for a in 0..dim {
                let row = &mut covariance[a * dim..(a + 1) * dim];
                for b in a..dim {
                    row[b] += dev[a] * dev[b];
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let v = covariance[a * dim + b] / nf;
                covariance[a * dim + b] = v;
                covariance[b * dim + a] = v;
            }
        }
        LatentMoments {
            mean,
            covariance,
            draws: count,
        }
    }

    /// Moments of the retained draws of every chain.
    pub fn from_chains(chains: &ChainSet) -> Self {
        let dim = chains.dim();
        Self::from_flat_draws(dim, chains.chains.iter().flat_map(move |c| c.draws.chunks_exact(dim)))
    }

    /// Moments of a list of `r × p` draws.
    pub fn from_draws(draws: &[DMatrix<f64>]) -> Self {
        let flat: Vec<Vec<f64>> = draws.iter().map(vectorize_unit).collect();
        let dim = flat.first().map_or(0, Vec::len);
        Self::from_flat_draws(dim, flat.iter().map(Vec::as_slice))
    }

    /// Gaussian approximation at the posterior mode.
    pub fn from_laplace(fit: &LaplaceFit) -> Self {
        LatentMoments {
            mean: fit.mode.clone(),
            covariance: linalg::to_row_major(&fit.covariance()),
            draws: 0,
        }
    }

    /// `E[(θ−M)(θ−M)ᵀ]` over the draws, row-major `rp × rp`.
    fn second_moment(&self, center: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        let dev: Vec<f64> = self.mean.iter().zip(center).map(|(m, c)| m - c).collect();
        let mut s = self.covariance.clone();
        for a in 0..dim {
            for b in 0..dim {
                s[a * dim + b] += dev[a] * dev[b];
            }
        }
        s
    }
}

/// Latent moments of every `(unit, component)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGrid {
    pub n: usize,
    pub g: usize,
    /// Indexed `j * g + k`.
    pub cells: Vec<LatentMoments>,
}

impl MomentGrid {
    pub fn new(n: usize, g: usize, cells: Vec<LatentMoments>) -> Result<Self> {
        if cells.len() != n * g {
            return Err(Error::Dimension(format!("{} cells for n={n}, G={g}", cells.len())));
        }
        Ok(MomentGrid { n, g, cells })
    }

    pub fn get(&self, j: usize, g: usize) -> &LatentMoments {
        &self.cells[j * self.g + g]
    }
}

fn check_grid(z: &Responsibilities, moments: &MomentGrid) -> Result<()> {
    if z.n() != moments.n || z.g() != moments.g {
        return Err(Error::Dimension(
            "responsibilities and moments disagree in shape".into(),
        ));
    }
    Ok(())
}

/// `π_g = n_g / n`.
pub fn m_step_pi(z: &Responsibilities) -> Vec<f64> {
    let n = z.n() as f64;
    z.column_sums().into_iter().map(|s| s / n).collect()
}

/// Responsibility-weighted average of the posterior means.
pub fn m_step_mean(z: &Responsibilities, moments: &MomentGrid, r: usize, p: usize) -> Result<Vec<DMatrix<f64>>> {
    check_grid(z, moments)?;
    let sums = z.column_sums();
    (0..z.g())
        .map(|g| {
            if !(sums[g] > 0.0) {
                return Err(Error::DegenerateComponent {
                    component: g,
                    weight: sums[g],
                });
            }
            let mut acc = vec![0.0; r * p];
            for j in 0..z.n() {
                let w = z.get(j, g);
                if w == 0.0 {
                    continue;
                }
                for (a, m) in acc.iter_mut().zip(&moments.get(j, g).mean) {
                    *a += w * m;
                }
            }
            acc.iter_mut().for_each(|a| *a /= sums[g]);
            Ok(devectorize(&acc, r, p))
        })
        .collect()
}

/// Which covariance a flip-flop half step updates.
#[derive(Clone, Copy)]
enum Side {
    Row,
    Column,
}

/// Shared body of the two covariance updates: sums
/// `z_jg E[(θ−M) A⁻¹ (θ−M)ᵀ]` (rows) or `z_jg E[(θ−M)ᵀ A⁻¹ (θ−M)]`
/// (columns) and divides by `n_g` times the other dimension.
fn covariance_update(
    z: &Responsibilities,
    moments: &MomentGrid,
    means: &[DMatrix<f64>],
    others: &[DMatrix<f64>],
    side: Side,
) -> Result<Vec<DMatrix<f64>>> {
    check_grid(z, moments)?;
    if means.len() != z.g() || others.len() != z.g() {
        return Err(Error::Dimension(
            "one mean and covariance per component expected".into(),
        ));
    }
    let sums = z.column_sums();
    let name = match side {
        Side::Row => "Phi",
        Side::Column => "Omega",
    };
    (0..z.g())
        .map(|g| {
            let (r, p) = means[g].shape();
            let rp = r * p;
            let other_inv = linalg::check_spd(
                &others[g],
                match side {
                    Side::Row => "Omega",
                    Side::Column => "Phi",
                },
            )?
            .inverse;
            let center = vectorize_unit(&means[g]);
            let (size, other) = match side {
                Side::Row => (r, p),
                Side::Column => (p, r),
            };
            let mut acc = DMatrix::<f64>::zeros(size, size);
            for j in 0..z.n() {
                let w = z.get(j, g);
                if w == 0.0 {
                    continue;
                }
                let s = moments.get(j, g).second_moment(&center);
                for a in 0..size {
                    for b in 0..size {
                        let mut total = 0.0;
                        for c in 0..other {
                            for d in 0..other {
                                let (x, y) = match side {
                                    Side::Row => (a * p + c, b * p + d),
                                    Side::Column => (c * p + a, d * p + b),
                                };
                                total += other_inv[(c, d)] * s[x * rp + y];
                            }
                        }
                        acc[(a, b)] += w * total;
                    }
                }
            }
            let estimate = symmetrize(&(acc / (other as f64 * sums[g])));
            linalg::check_spd(&estimate, name)?;
            Ok(estimate)
        })
        .collect()
}

/// Row covariance update given the new means and the current `Ω`.
pub fn m_step_phi(
    z: &Responsibilities,
    moments: &MomentGrid,
    means: &[DMatrix<f64>],
    omegas: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    covariance_update(z, moments, means, omegas, Side::Row)
}

/// Column covariance update given the new means and the just updated `Φ`.
pub fn m_step_omega(
    z: &Responsibilities,
    moments: &MomentGrid,
    means: &[DMatrix<f64>],
    phis: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    covariance_update(z, moments, means, phis, Side::Column)
}

/// Rescales `(Φ, Ω)` to `(Φ/Φ₁₁, Ω·Φ₁₁)`.
pub fn normalize_identifiability(phi: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let scale = phi[(0, 0)];
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NotPositiveDefinite { name: "Phi".into() });
    }
    let mut phi_n = phi / scale;
    phi_n[(0, 0)] = 1.0;
    Ok((phi_n, omega * scale))
}

/// Parameter-dependent part of the expected complete-data log-likelihood,
/// `Σ_j Σ_g z_jg [log π_g + E log φ(θ_jg; M_g, Φ_g, Ω_g)]`, on fixed moments.
pub fn q_surrogate(
    z: &Responsibilities,
    pi: &[f64],
    components: &[MatNormParams],
    moments: &MomentGrid,
) -> Result<f64> {
    check_grid(z, moments)?;
    let mut total = 0.0;
    for (g, params) in components.iter().enumerate() {
        let factors = params.factorize()?;
        let (r, p) = (params.r(), params.p());
        let rp = r * p;
        let center = vectorize_unit(&params.mean);
        let log_pi = pi[g].ln();
        for j in 0..z.n() {
            let w = z.get(j, g);
            if w == 0.0 {
                continue;
            }
            let s = moments.get(j, g).second_moment(&center);
            let mut quad = 0.0;
            for a in 0..rp {
                for b in 0..rp {
                    quad += factors.phi.inverse[(a / p, b / p)] * factors.omega.inverse[(a % p, b % p)] * s[a * rp + b];
                }
            }
            total += w * (log_pi + factors.log_normalizer() - 0.5 * quad);
        }
    }
    Ok(total)
}

/// Settings of one mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub chain: ChainConfig,
    pub max_outer_iterations: usize,
    /// Level of the stationarity test on the log-likelihood trace.
    pub alpha: f64,
    /// Trace length before the stationarity test is first applied.
    pub min_trace: usize,
    /// Resampling attempts after a failed chain diagnostic.
    pub max_retries: usize,
    /// Pairs with a responsibility below this use Laplace moments instead
    /// of sampling.
    pub sampling_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            chain: ChainConfig::default(),
            max_outer_iterations: 200,
            alpha: 0.05,
            min_trace: 10,
            max_retries: 5,
            sampling_floor: 1e-8,
        }
    }
}

/// Chain diagnostics summary of one E-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Chain length (warmup included) at the start of the E-step.
    pub chain_iterations: usize,
    pub pairs_sampled: usize,
    /// Pairs that needed at least one longer resample.
    pub pairs_retried: usize,
    /// Pairs still failing after the last retry.
    pub pairs_failed: usize,
    /// `None` when some PSRF was infinite.
    pub max_psrf: Option<f64>,
    pub min_ess: f64,
    pub passed: bool,
}

/// A fitted mixture for one value of `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    #[serde(rename = "G")]
    pub g: usize,
    pub pi: Vec<f64>,
    pub components: Vec<MatNormParams>,
    pub z: Responsibilities,
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
    pub n_outer_iterations: usize,
    pub converged: bool,
    pub diagnostics_history: Vec<IterationDiagnostics>,
    pub hard_labels: Vec<usize>,
}

/// Laplace fits of every pair at the given parameters, indexed `j * G + g`.
fn laplace_grid(
    units: &[Vec<f64>],
    s: &LibrarySizes,
    components: &[MatNormParams],
    factors: &[MatNormFactors],
) -> Result<Vec<LaplaceFit>> {
    let g_count = components.len();
    (0..units.len() * g_count)
        .into_par_iter()
        .map(|idx| {
            let (j, g) = (idx / g_count, idx % g_count);
            LatentPosterior::new(&units[j], s, &components[g], &factors[g])?.find_mode()
        })
        .collect()
}

fn log_weights(grid: &[LaplaceFit], pi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let g_count = pi.len();
    (0..n)
        .map(|j| {
            (0..g_count)
                .map(|g| pi[g].ln() + grid[j * g_count + g].log_lik)
                .collect()
        })
        .collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood from a Laplace grid.
fn observed_loglik(grid: &[LaplaceFit], pi: &[f64], n: usize) -> f64 {
    log_weights(grid, pi, n).iter().map(|row| log_sum_exp(row)).sum()
}

/// Observed-data log-likelihood of a mixture with Laplace unit likelihoods.
pub fn mixture_log_likelihood(
    tensor: &CountTensor,
    s: &LibrarySizes,
    pi: &[f64],
    components: &[MatNormParams],
) -> Result<f64> {
    let factors = components.iter().map(|c| c.factorize()).collect::<Result<Vec<_>>>()?;
    let units: Vec<Vec<f64>> = (0..tensor.n()).map(|j| tensor.unit_vector(j)).collect();
    let grid = laplace_grid(&units, s, components, &factors)?;
    Ok(observed_loglik(&grid, pi, tensor.n()))
}

struct PairOutcome {
    moments: LatentMoments,
    sampled: bool,
    retried: bool,
    passed: bool,
    max_psrf: f64,
    min_ess: f64,
}

struct EStepInput<'a> {
    units: &'a [Vec<f64>],
    unit_seeds: &'a [u64],
    s: &'a LibrarySizes,
    components: &'a [MatNormParams],
    factors: &'a [MatNormFactors],
    grid: &'a [LaplaceFit],
}

fn sample_pair(
    input: &EStepInput<'_>,
    j: usize,
    g: usize,
    config: &FitConfig,
    chain: &ChainConfig,
    seed: u64,
) -> Result<PairOutcome> {
    let g_count = input.components.len();
    let laplace = &input.grid[j * g_count + g];
    let params = &input.components[g];
    let mut post = LatentPosterior::new(&input.units[j], input.s, params, &input.factors[g])?;
    let mut cfg = chain.clone();
    for attempt in 0..=config.max_retries {
        let pair_seed = derive_seed(seed, &[input.unit_seeds[j], g as u64, attempt as u64]);
        let last = attempt == config.max_retries;
        match sample_latent_from(&mut post, laplace, params.r(), params.p(), &cfg, pair_seed) {
            Ok(chains) => {
                let diag = check_chains(&chains)?;
                if diag.passed || last {
                    return Ok(PairOutcome {
                        moments: LatentMoments::from_chains(&chains),
                        sampled: true,
                        retried: attempt > 0,
                        passed: diag.passed,
                        max_psrf: diag.max_psrf(),
                        min_ess: diag.min_ess(),
                    });
                }
            }
            Err(Error::SamplerFailure { .. }) if !last => {}
            Err(e) => return Err(e),
        }
        cfg = grow(&cfg);
    }
    unreachable!("the last attempt always returns")
}

fn sample_grid(
    input: &EStepInput<'_>,
    z: &Responsibilities,
    config: &FitConfig,
    chain: &ChainConfig,
    seed: u64,
    iteration: usize,
) -> Result<(MomentGrid, IterationDiagnostics)> {
    let g_count = input.components.len();
    let n = input.units.len();
    let outcomes: Vec<PairOutcome> = (0..n * g_count)
        .into_par_iter()
        .map(|idx| {
            let (j, g) = (idx / g_count, idx % g_count);
            if z.get(j, g) < config.sampling_floor {
                return Ok(PairOutcome {
                    moments: LatentMoments::from_laplace(&input.grid[idx]),
                    sampled: false,
                    retried: false,
                    passed: true,
                    max_psrf: f64::NEG_INFINITY,
                    min_ess: f64::INFINITY,
                });
            }
            sample_pair(input, j, g, config, chain, seed)
        })
        .collect::<Result<_>>()?;
    let sampled = outcomes.iter().filter(|o| o.sampled);
    let max_psrf = sampled.clone().map(|o| o.max_psrf).fold(f64::NEG_INFINITY, f64::max);
    let diagnostics = IterationDiagnostics {
        iteration,
        chain_iterations: chain.n_iter,
        pairs_sampled: sampled.clone().count(),
        pairs_retried: sampled.clone().filter(|o| o.retried).count(),
        pairs_failed: sampled.clone().filter(|o| !o.passed).count(),
        max_psrf: max_psrf.is_finite().then_some(max_psrf),
        min_ess: sampled.clone().map(|o| o.min_ess).fold(f64::INFINITY, f64::min),
        passed: sampled.clone().all(|o| o.passed),
    };
    let cells = outcomes.into_iter().map(|o| o.moments).collect();
    Ok((MomentGrid::new(n, g_count, cells)?, diagnostics))
}

/// Result of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub z: Responsibilities,
    pub moments: MomentGrid,
    pub diagnostics: IterationDiagnostics,
}

/// One E-step at the current parameters: Laplace responsibilities, then
/// latent sampling of every pair whose responsibility reaches the sampling
/// floor. Pair seeds derive from `(seed, unit id, component, attempt)`.
pub fn e_step(
    tensor: &CountTensor,
    s: &LibrarySizes,
    pi: &[f64],
    components: &[MatNormParams],
    config: &FitConfig,
    chain: &ChainConfig,
    seed: u64,
) -> Result<EStep> {
    if pi.len() != components.len() || pi.is_empty() {
        return Err(Error::Dimension("one mixing weight per component expected".into()));
    }
    let factors = components.iter().map(|c| c.factorize()).collect::<Result<Vec<_>>>()?;
    let units: Vec<Vec<f64>> = (0..tensor.n()).map(|j| tensor.unit_vector(j)).collect();
    let unit_seeds: Vec<u64> = tensor.unit_ids().iter().map(|u| hash_label(u)).collect();
    let grid = laplace_grid(&units, s, components, &factors)?;
    let z = Responsibilities::from_log_weights(log_weights(&grid, pi, tensor.n()))?;
    let input = EStepInput {
        units: &units,
        unit_seeds: &unit_seeds,
        s,
        components,
        factors: &factors,
        grid: &grid,
    };
    let (moments, diagnostics) = sample_grid(&input, &z, config, chain, seed, 0)?;
    Ok(EStep {
        z,
        moments,
        diagnostics,
    })
}

/// The four M-step updates in order: `π`, `M`, `Φ` given the current `Ω`,
/// then `Ω` given the new `Φ`.
pub fn m_step(
    z: &Responsibilities,
    moments: &MomentGrid,
    components: &[MatNormParams],
) -> Result<(Vec<f64>, Vec<MatNormParams>)> {
    let (r, p) = (components[0].r(), components[0].p());
    let pi = m_step_pi(z);
    let means = m_step_mean(z, moments, r, p)?;
    let omegas: Vec<DMatrix<f64>> = components.iter().map(|c| c.omega.clone()).collect();
    let phis = m_step_phi(z, moments, &means, &omegas)?;
    let omegas = m_step_omega(z, moments, &means, &phis)?;
    let params = means
        .into_iter()
        .zip(phis)
        .zip(omegas)
        .map(|((mean, phi), omega)| MatNormParams { mean, phi, omega })
        .collect();
    Ok((pi, params))
}

fn check_weights(z: &Responsibilities) -> Result<()> {
    for (g, &w) in z.column_sums().iter().enumerate() {
        if w < 1.0 {
            return Err(Error::DegenerateComponent {
                component: g,
                weight: w,
            });
        }
    }
    Ok(())
}

/// Fits a `G`-component mixture, `G` taken from the initial
/// responsibilities. Initial parameters come from
/// [`crate::init::init_params`].
///
/// Units are processed in the order of their ids, so reordering the input
/// (together with `init`) gives the same fit.
pub fn fit_mixture(
    tensor: &CountTensor,
    s: &LibrarySizes,
    init: &Responsibilities,
    config: &FitConfig,
    seed: u64,
) -> Result<MixtureFit> {
    if init.n() != tensor.n() {
        return Err(Error::Dimension(format!(
            "{} initial rows for {} units",
            init.n(),
            tensor.n()
        )));
    }
    s.check_len(tensor.rp())?;
    config.chain.validate()?;
    let mut order: Vec<usize> = (0..tensor.n()).collect();
    order.sort_by(|&a, &b| tensor.unit_ids()[a].cmp(&tensor.unit_ids()[b]));
    let sorted = tensor.permute_units(&order)?;
    let init_sorted = init.permute_units(&order);
    check_weights(&init_sorted)?;

    let n = sorted.n();
    let units: Vec<Vec<f64>> = (0..n).map(|j| sorted.unit_vector(j)).collect();
    let unit_seeds: Vec<u64> = sorted.unit_ids().iter().map(|u| hash_label(u)).collect();

    // start in canonical component order so init label names do not matter
    let start_pi = m_step_pi(&init_sorted);
    let start = crate::init::init_params(&sorted, &init_sorted)?;
    let mut start_order: Vec<usize> = (0..start.len()).collect();
    start_order.sort_by(|&a, &b| start[a].mean[(0, 0)].total_cmp(&start[b].mean[(0, 0)]));
    let mut pi: Vec<f64> = start_order.iter().map(|&g| start_pi[g]).collect();
    let mut components: Vec<MatNormParams> = start_order.iter().map(|&g| start[g].clone()).collect();
    let mut factors = components.iter().map(|c| c.factorize()).collect::<Result<Vec<_>>>()?;
    let mut grid = laplace_grid(&units, s, &components, &factors)?;
    let mut z = Responsibilities::from_log_weights(log_weights(&grid, &pi, n))?;

    let mut chain = config.chain.clone();
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    for t in 0..config.max_outer_iterations {
        check_weights(&z)?;
        let input = EStepInput {
            units: &units,
            unit_seeds: &unit_seeds,
            s,
            components: &components,
            factors: &factors,
            grid: &grid,
        };
        let (moments, diagnostics) = sample_grid(&input, &z, config, &chain, derive_seed(seed, &[t as u64]), t + 1)?;
        history.push(diagnostics);

        let (new_pi, new_components) = m_step(&z, &moments, &components)?;
        pi = new_pi;
        components = new_components;
        factors = components.iter().map(|c| c.factorize()).collect::<Result<Vec<_>>>()?;
        grid = laplace_grid(&units, s, &components, &factors)?;
        let loglik = observed_loglik(&grid, &pi, n);
        if !loglik.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "log-likelihood is {loglik} at iteration {}",
                t + 1
            )));
        }
        trace.push(loglik);
        z = Responsibilities::from_log_weights(log_weights(&grid, &pi, n))?;

        if trace.len() >= config.min_trace && heidelberger_welch(&trace, config.alpha).passed {
            converged = true;
            break;
        }
        chain = grow(&chain);
    }
    check_weights(&z)?;

    // identifiability, then components ordered by their first mean entry
    for c in components.iter_mut() {
        let (phi, omega) = normalize_identifiability(&c.phi, &c.omega)?;
        c.phi = phi;
        c.omega = omega;
    }
    let mut comp_order: Vec<usize> = (0..components.len()).collect();
    comp_order.sort_by(|&a, &b| components[a].mean[(0, 0)].total_cmp(&components[b].mean[(0, 0)]));
    let components: Vec<MatNormParams> = comp_order.iter().map(|&g| components[g].clone()).collect();
    let pi: Vec<f64> = comp_order.iter().map(|&g| pi[g]).collect();

    let mut inverse = vec![0; n];
    for (k, &j) in order.iter().enumerate() {
        inverse[j] = k;
    }
    let z = z.permute_components(&comp_order).permute_units(&inverse);
    Ok(MixtureFit {
        g: components.len(),
        hard_labels: z.hard_labels(),
        final_loglik: *trace.last().expect("at least one outer iteration"),
        n_outer_iterations: trace.len(),
        loglik_trace: trace,
        converged,
        diagnostics_history: history,
        pi,
        components,
        z,
    })
}
