//! Multi-chain Hamiltonian Monte Carlo for one unit's latent matrix.
//!
//! Chains run in coordinates whitened by the Laplace approximation at the
//! posterior mode, `θ = θ̂ + L⁻ᵀ u` with `H = L Lᵀ` the negated Hessian. In
//! `u` the target is close to a standard normal, so a single step size suits
//! every direction. The step size is tuned by dual averaging during warmup
//! and jittered by ±20% on every iteration to avoid resonant trajectories.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{backward_solve_transposed, forward_solve};
use crate::matnorm::MatNormParams;
use crate::mvpln::{LaplaceFit, LatentPosterior};
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor_io::{devectorize, vectorize_unit, LibrarySizes};

/// A differentiable log density.
pub trait GradientTarget {
    fn dim(&self) -> usize;

    /// Returns `log π(x)` and writes `∇ log π(x)` into `grad`.
    fn log_density_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Acceptance rate below which a chain is reported as failed.
pub const MIN_ACCEPTANCE: f64 = 0.05;
const STEP_JITTER: f64 = 0.2;
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Iterations per chain, warmup included.
    pub n_iter: usize,
    pub warmup_fraction: f64,
    /// Initial step size in whitened coordinates.
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Iterations added by [`grow`].
    pub increment: usize,
    /// Acceptance rate targeted by warmup adaptation.
    pub target_accept: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_chains: 3,
            n_iter: 1000,
            warmup_fraction: 0.5,
            step_size: 0.5,
            n_leapfrog: 10,
            increment: 100,
            target_accept: 0.8,
        }
    }
}

impl ChainConfig {
    pub fn warmup(&self) -> usize {
        (self.n_iter as f64 * self.warmup_fraction).floor() as usize
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        self.n_iter - self.warmup()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_chains < 2 {
            return bad("at least two chains are needed");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup fraction must lie in (0, 1)");
        }
        if self.warmup() == 0 || self.retained() == 0 {
            return bad("both warmup and retained draws must be non-empty");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Lengthens every chain by `config.increment` iterations.
pub fn grow(config: &ChainConfig) -> ChainConfig {
    ChainConfig {
        n_iter: config.n_iter + config.increment,
        ..config.clone()
    }
}

/// Retained draws of one chain, row-major `retained × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<f64>,
    pub acceptance_rate: f64,
    pub step_size: f64,
}

impl Chain {
    pub fn len(&self, dim: usize) -> usize {
        self.draws.len() / dim
    }

    pub fn draw(&self, k: usize, dim: usize) -> &[f64] {
        &self.draws[k * dim..(k + 1) * dim]
    }
}

/// Retained draws of all chains for one `(unit, component)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub r: usize,
    pub p: usize,
    pub chains: Vec<Chain>,
    pub config: ChainConfig,
}

impl ChainSet {
    pub fn dim(&self) -> usize {
        self.r * self.p
    }

    /// Draws per chain.
    pub fn retained(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len(self.dim()))
    }

    /// The draws of coordinate `c`, one vector per chain.
    pub fn coordinate(&self, c: usize) -> Vec<Vec<f64>> {
        coordinate_draws(&self.chains, self.dim(), c)
    }

    pub fn min_acceptance(&self) -> f64 {
        self.chains
            .iter()
            .map(|c| c.acceptance_rate)
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn coordinate_draws(chains: &[Chain], dim: usize, c: usize) -> Vec<Vec<f64>> {
    chains
        .iter()
        .map(|ch| ch.draws.iter().skip(c).step_by(dim).copied().collect())
        .collect()
}

/// Affine map from whitened to target coordinates.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub center: Vec<f64>,
    /// Row-major lower-triangular `L`; `None` means the identity.
    pub lower: Option<Vec<f64>>,
}

impl Whitening {
    pub fn identity(dim: usize) -> Self {
        Whitening {
            center: vec![0.0; dim],
            lower: None,
        }
    }

    pub fn from_laplace(fit: &LaplaceFit) -> Self {
        Whitening {
            center: fit.mode.clone(),
            lower: Some(fit.hessian_lower.clone()),
        }
    }

    fn to_target(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
        if let Some(l) = &self.lower {
            backward_solve_transposed(l, u.len(), out);
        }
        for (o, c) in out.iter_mut().zip(&self.center) {
            *o += c;
        }
    }

    fn pull_back_gradient(&self, grad: &mut [f64]) {
        if let Some(l) = &self.lower {
            forward_solve(l, grad.len(), grad);
        }
    }
}

struct WhitenedTarget<'a, T> {
    target: &'a mut T,
    whitening: &'a Whitening,
    theta: Vec<f64>,
}

impl<T: GradientTarget> WhitenedTarget<'_, T> {
    fn eval(&mut self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.whitening.to_target(u, &mut self.theta);
        let lp = self.target.log_density_grad(&self.theta, grad);
        self.whitening.pull_back_gradient(grad);
        lp
    }
}

/// Dual-averaging step-size adaptation.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step).ln(),
            target,
            h_bar: 0.0,
            log_eps: step.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Runs `config.n_chains` independent HMC chains; chain `k` draws from the
/// stream `derive_seed(seed, [k])` and starts at a standard-normal offset
/// from the whitening center.
pub fn run_hmc<T: GradientTarget>(
    target: &mut T,
    whitening: &Whitening,
    config: &ChainConfig,
    seed: u64,
) -> Result<Vec<Chain>> {
    config.validate()?;
    (0..config.n_chains)
        .map(|k| run_chain(target, whitening, config, derive_seed(seed, &[k as u64])))
        .collect()
}

fn run_chain<T: GradientTarget>(
    target: &mut T,
    whitening: &Whitening,
    config: &ChainConfig,
    seed: u64,
) -> Result<Chain> {
    let dim = target.dim();
    let mut rng = rng_from_seed(seed);
    let mut wt = WhitenedTarget {
        target,
        whitening,
        theta: vec![0.0; dim],
    };
    let warmup = config.warmup();
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut grad = vec![0.0; dim];
    let mut logp = wt.eval(&u, &mut grad);

    let mut adapt = DualAveraging::new(config.step_size, config.target_accept);
    let mut step = config.step_size;
    let mut draws = Vec::with_capacity(config.retained() * dim);
    let mut accepted = 0usize;

    let mut u_new = vec![0.0; dim];
    let mut grad_new = vec![0.0; dim];
    let mut momentum = vec![0.0; dim];
    let mut theta = vec![0.0; dim];

    for it in 0..config.n_iter {
        if it < warmup {
            step = adapt.current();
        } else if it == warmup {
            step = adapt.final_step();
        }
        let eps = step * (1.0 + STEP_JITTER * (2.0 * rng.random::<f64>() - 1.0));
        for m in momentum.iter_mut() {
            *m = rng.sample(StandardNormal);
        }
        let h0 = -logp + 0.5 * dot(&momentum, &momentum);

        u_new.copy_from_slice(&u);
        grad_new.copy_from_slice(&grad);
        let mut logp_new = logp;
        let mut diverged = false;
        for _ in 0..config.n_leapfrog {
            for (m, g) in momentum.iter_mut().zip(&grad_new) {
                *m += 0.5 * eps * g;
            }
            for (x, m) in u_new.iter_mut().zip(&momentum) {
                *x += eps * m;
            }
            logp_new = wt.eval(&u_new, &mut grad_new);
            if !logp_new.is_finite() {
                diverged = true;
                break;
            }
            for (m, g) in momentum.iter_mut().zip(&grad_new) {
                *m += 0.5 * eps * g;
            }
        }
        let h1 = -logp_new + 0.5 * dot(&momentum, &momentum);
        let accept_prob = if diverged || !h1.is_finite() || h1 - h0 > MAX_ENERGY_ERROR {
            0.0
        } else {
            (h0 - h1).exp().min(1.0)
        };
        let accept = accept_prob >= 1.0 || rng.random::<f64>() < accept_prob;
        if accept {
            std::mem::swap(&mut u, &mut u_new);
            std::mem::swap(&mut grad, &mut grad_new);
            logp = logp_new;
        }
        if it < warmup {
            adapt.update(accept_prob);
        } else {
            accepted += accept as usize;
            whitening.to_target(&u, &mut theta);
            draws.extend_from_slice(&theta);
        }
    }
    let acceptance_rate = accepted as f64 / config.retained() as f64;
    if acceptance_rate < MIN_ACCEPTANCE {
        return Err(Error::SamplerFailure {
            acceptance: acceptance_rate,
        });
    }
    Ok(Chain {
        draws,
        acceptance_rate,
        step_size: step,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Samples the latent matrix of one unit given counts `y` (`r × p`).
pub fn sample_latent(
    y: &DMatrix<f64>,
    library_sizes: &LibrarySizes,
    params: &MatNormParams,
    config: &ChainConfig,
    seed: u64,
) -> Result<ChainSet> {
    if y.shape() != params.mean.shape() {
        return Err(Error::Dimension("counts and mean differ in shape".into()));
    }
    let factors = params.factorize()?;
    let mut post = LatentPosterior::new(&vectorize_unit(y), library_sizes, params, &factors)?;
    let laplace = post.find_mode()?;
    sample_latent_from(&mut post, &laplace, params.r(), params.p(), config, seed)
}

/// Samples with an already computed Laplace fit of `post`.
pub fn sample_latent_from(
    post: &mut LatentPosterior,
    laplace: &LaplaceFit,
    r: usize,
    p: usize,
    config: &ChainConfig,
    seed: u64,
) -> Result<ChainSet> {
    let whitening = Whitening::from_laplace(laplace);
    let chains = run_hmc(post, &whitening, config, seed)?;
    Ok(ChainSet {
        r,
        p,
        chains,
        config: config.clone(),
    })
}

/// Elementwise average of all retained draws across all chains.
///
/// Per-chain totals are added in sorted order, so the result does not depend
/// on the order of the chains.
pub fn posterior_mean(chains: &ChainSet) -> DMatrix<f64> {
    let dim = chains.dim();
    let total: usize = chains.chains.iter().map(|c| c.len(dim)).sum();
    let mut mean = vec![0.0; dim];
    let mut per_chain = Vec::with_capacity(chains.chains.len());
    for (c, m) in mean.iter_mut().enumerate() {
        per_chain.clear();
        per_chain.extend(
            chains
                .chains
                .iter()
                .map(|ch| ch.draws.iter().skip(c).step_by(dim).sum::<f64>()),
        );
        per_chain.sort_by(f64::total_cmp);
        *m = per_chain.iter().sum::<f64>() / total as f64;
    }
    devectorize(&mean, chains.r, chains.p)
}

/// Writes a chain dump: `chain,iteration,theta_1..theta_rp`, with 1-based
/// chain numbers and absolute iteration numbers (warmup included).
pub fn write_chain_dump<W: Write>(writer: W, chains: &ChainSet) -> Result<()> {
    let dim = chains.dim();
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend((1..=dim).map(|c| format!("theta_{c}")));
    csv.write_record(&header)?;
    let warmup = chains.config.warmup();
    for (k, chain) in chains.chains.iter().enumerate() {
        for it in 0..chain.len(dim) {
            let mut record = vec![(k + 1).to_string(), (warmup + it + 1).to_string()];
            record.extend(chain.draw(it, dim).iter().map(|v| format!("{v:?}")));
            csv.write_record(&record)?;
        }
    }
    csv.flush().map_err(|e| Error::io("<chain dump>", e))?;
    Ok(())
}

/// Draws read back from a chain dump.
#[derive(Debug, Clone)]
pub struct DumpedChains {
    pub dim: usize,
    pub chains: Vec<Chain>,
}

/// Reads a chain dump written by [`write_chain_dump`]. Rows are grouped by
/// chain number and ordered by iteration.
pub fn read_chain_dump<R: Read>(reader: R) -> Result<DumpedChains> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::Dimension(
            "chain dump needs chain, iteration and at least one value".into(),
        ));
    }
    let dim = header.len() - 2;
    let mut rows: Vec<(u64, u64, Vec<f64>)> = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse_int = |s: &str| {
            s.trim().parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid integer {s:?}"),
            })
        };
        if rec.len() != dim + 2 {
            return Err(Error::Dimension(format!("line {line} has {} fields", rec.len())));
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid value {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((parse_int(&rec[0])?, parse_int(&rec[1])?, values));
    }
    rows.sort_by_key(|(c, it, _)| (*c, *it));
    let mut chains: Vec<Chain> = Vec::new();
    let mut current: Option<u64> = None;
    for (c, _, values) in rows {
        if current != Some(c) {
            chains.push(Chain {
                draws: Vec::new(),
                acceptance_rate: f64::NAN,
                step_size: f64::NAN,
            });
            current = Some(c);
        }
        chains.last_mut().expect("pushed above").draws.extend(values);
    }
    Ok(DumpedChains { dim, chains })
}
