//! Starting responsibilities and component parameters.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::em::{m_step_pi, mixture_log_likelihood, Responsibilities};
use crate::error::{Error, Result};
use crate::matnorm::MatNormParams;
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor_io::{devectorize, CountTensor, LibrarySizes};

/// Floor applied to cluster mean counts before taking logs.
pub const MEAN_FLOOR: f64 = 0.5;
const MAX_LLOYD_ITERATIONS: usize = 100;
const MAX_REPAIRS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Kmeans,
    Random,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(InitMethod::Kmeans),
            "random" => Ok(InitMethod::Random),
            other => Err(Error::InvalidArgument(format!("unknown init method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSpec {
    pub method: InitMethod,
    pub runs: usize,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            method: InitMethod::Kmeans,
            runs: 3,
            seed: 0,
        }
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("at least one init run is needed".into()));
        }
        Ok(())
    }
}

fn log_features(tensor: &CountTensor) -> Vec<Vec<f64>> {
    (0..tensor.n())
        .map(|j| tensor.unit_counts(j).iter().map(|&c| (c as f64 + 1.0).ln()).collect())
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// One Lloyd run; returns labels and the within-cluster sum of squares.
fn lloyd<R: Rng>(x: &[Vec<f64>], g: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = x.len();
    let dim = x[0].len();
    let mut centroids: Vec<Vec<f64>> = sample_indices(rng, n, g).iter().map(|j| x[j].clone()).collect();
    let mut labels = vec![usize::MAX; n];
    let mut repairs = 0;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (j, xj) in x.iter().enumerate() {
            let (k, _) = nearest(xj, &centroids);
            if labels[j] != k {
                labels[j] = k;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; g];
        let mut counts = vec![0usize; g];
        for (xj, &k) in x.iter().zip(&labels) {
            counts[k] += 1;
            for (s, v) in sums[k].iter_mut().zip(xj) {
                *s += v;
            }
        }
        let mut repaired = false;
        for k in 0..g {
            if counts[k] > 0 {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        for k in 0..g {
            if counts[k] == 0 && repairs < MAX_REPAIRS {
                // move the empty centroid onto the point farthest from its own centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&x[a], &centroids[labels[a]]);
                        let db = sq_dist(&x[b], &centroids[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n >= 1");
                centroids[k] = x[far].clone();
                repairs += 1;
                repaired = true;
            }
        }
        if !changed && !repaired {
            break;
        }
    }
    let wcss = x.iter().zip(&labels).map(|(xj, &k)| sq_dist(xj, &centroids[k])).sum();
    (labels, wcss)
}

/// Lloyd's k-means on `log(count + 1)` features, best of `spec.runs`
/// restarts by within-cluster sum of squares.
///
/// Units are visited in the order of their ids, so reordering the input
/// reorders the labels the same way.
pub fn kmeans_init(tensor: &CountTensor, g: usize, spec: &InitSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = tensor.n();
    if g == 0 || g > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {g} clusters from {n} units"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| tensor.unit_ids()[a].cmp(&tensor.unit_ids()[b]));
    let features = log_features(tensor);
    let x: Vec<Vec<f64>> = order.iter().map(|&j| features[j].clone()).collect();

    let mut best: Option<(Vec<usize>, f64)> = None;
    for run in 0..spec.runs {
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[run as u64]));
        let (labels, wcss) = lloyd(&x, g, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| wcss < *b) {
            best = Some((labels, wcss));
        }
    }
    let (sorted_labels, _) = best.expect("runs >= 1");
    let mut labels = vec![0; n];
    for (k, &j) in order.iter().enumerate() {
        labels[j] = sorted_labels[k];
    }
    Ok(labels)
}

/// Within-cluster sum of squares of `labels` in the k-means feature space.
pub fn wcss(tensor: &CountTensor, labels: &[usize], g: usize) -> f64 {
    let x = log_features(tensor);
    let dim = tensor.rp();
    let mut sums = vec![vec![0.0; dim]; g];
    let mut counts = vec![0usize; g];
    for (xj, &k) in x.iter().zip(labels) {
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(xj) {
            *s += v;
        }
    }
    x.iter()
        .zip(labels)
        .map(|(xj, &k)| {
            let c: Vec<f64> = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            sq_dist(xj, &c)
        })
        .sum()
}

/// Rows drawn uniformly from the probability simplex by normalizing
/// exponential variates.
pub fn random_init<R: Rng + ?Sized>(n: usize, g: usize, rng: &mut R) -> Result<Responsibilities> {
    if g == 0 || n == 0 {
        return Err(Error::InvalidArgument("random init needs n >= 1 and G >= 1".into()));
    }
    let rows = (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..g).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        })
        .collect();
    Responsibilities::new(rows)
}

/// Component parameters from initial responsibilities: `M_g` is the log of
/// the weighted mean count of every cell (floored at 0.5); `Φ_g` and `Ω_g`
/// are identities.
pub fn init_params(tensor: &CountTensor, z: &Responsibilities) -> Result<Vec<MatNormParams>> {
    if z.n() != tensor.n() {
        return Err(Error::Dimension(format!("{} rows for {} units", z.n(), tensor.n())));
    }
    let (r, p) = (tensor.r(), tensor.p());
    let weights = z.column_sums();
    (0..z.g())
        .map(|g| {
            if weights[g] < 1.0 {
                return Err(Error::DegenerateComponent {
                    component: g,
                    weight: weights[g],
                });
            }
            let mut acc = vec![0.0; r * p];
            for j in 0..tensor.n() {
                let w = z.get(j, g);
                for (a, &c) in acc.iter_mut().zip(tensor.unit_counts(j)) {
                    *a += w * c as f64;
                }
            }
            let logs: Vec<f64> = acc.iter().map(|a| (a / weights[g]).max(MEAN_FLOOR).ln()).collect();
            Ok(MatNormParams {
                mean: devectorize(&logs, r, p),
                phi: DMatrix::identity(r, r),
                omega: DMatrix::identity(p, p),
            })
        })
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Observed log-likelihood at the initial parameters of every candidate;
/// candidates whose parameters cannot be formed score `-∞`.
pub fn candidate_logliks(tensor: &CountTensor, s: &LibrarySizes, candidates: &[Responsibilities]) -> Vec<f64> {
    candidates
        .iter()
        .map(|z| {
            let pi = m_step_pi(z);
            init_params(tensor, z)
                .and_then(|params| mixture_log_likelihood(tensor, s, &pi, &params))
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

/// Index of the candidate with the highest log-likelihood at its initial
/// parameters; ties go to the lower index.
pub fn best_of_runs(tensor: &CountTensor, s: &LibrarySizes, candidates: &[Responsibilities]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no initial candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(0);
    }
    let scores = candidate_logliks(tensor, s, candidates);
    if scores.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::InvalidArgument(
            "no initial candidate yields valid parameters".into(),
        ));
    }
    Ok(argmax_first(&scores).expect("non-empty"))
}

/// Initial responsibilities for a `G`-component fit. k-means yields a
/// single candidate (its restarts are ranked by WCSS); random init draws
/// `runs` candidates and keeps the best by log-likelihood.
pub fn initialize(tensor: &CountTensor, s: &LibrarySizes, g: usize, spec: &InitSpec) -> Result<Responsibilities> {
    spec.validate()?;
    match spec.method {
        InitMethod::Kmeans => Responsibilities::from_labels(&kmeans_init(tensor, g, spec)?, g),
        InitMethod::Random => {
            let candidates = (0..spec.runs)
                .map(|run| {
                    let mut rng = rng_from_seed(derive_seed(spec.seed, &[run as u64]));
                    random_init(tensor.n(), g, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let best = best_of_runs(tensor, s, &candidates)?;
            Ok(candidates.into_iter().nth(best).expect("index from candidates"))
        }
    }
}
