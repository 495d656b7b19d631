//! Synthetic three-way count data from known MVPLN mixtures.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnorm::MatNormParams;
use crate::mvpln::sample_counts;
use crate::seed::{derive_seed, rng_from_seed};
use crate::tensor_io::{save_counts, CountTensor, LibrarySizes};

/// Ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub r: usize,
    pub p: usize,
    pub pi: Vec<f64>,
    pub components: Vec<MatNormParams>,
    /// `None` means unit library sizes.
    pub library_sizes: Option<Vec<f64>>,
    pub seed: u64,
    pub diagonal_only: bool,
}

impl SimSpec {
    pub fn g(&self) -> usize {
        self.pi.len()
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn library_sizes(&self) -> Result<LibrarySizes> {
        match &self.library_sizes {
            Some(v) => LibrarySizes::new(v.clone()),
            None => Ok(LibrarySizes::unit(self.r * self.p)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 || self.p == 0 {
            return Err(Error::Dimension("n, r and p must be at least 1".into()));
        }
        if self.pi.is_empty() || self.pi.len() != self.components.len() {
            return Err(Error::Dimension("one mixing weight per component expected".into()));
        }
        if self.pi.iter().any(|w| !(*w > 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(
                "mixing weights must be positive and sum to 1".into(),
            ));
        }
        for c in &self.components {
            if c.r() != self.r || c.p() != self.p {
                return Err(Error::Dimension("component shape differs from (r, p)".into()));
            }
            c.validate()?;
            if self.diagonal_only && (has_off_diagonal(&c.phi) || has_off_diagonal(&c.omega)) {
                return Err(Error::InvalidArgument(
                    "diagonal-only spec has off-diagonal covariance".into(),
                ));
            }
        }
        self.library_sizes()?.check_len(self.r * self.p)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

fn has_off_diagonal(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).any(|i| (0..a.ncols()).any(|j| i != j && a[(i, j)] != 0.0))
}

/// `Q diag(λ) Qᵀ` with `λ` uniform on `[lo, hi]` and `Q` Haar-distributed.
pub fn random_spd<R: Rng + ?Sized>(dim: usize, lo: f64, hi: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) || dim == 0 {
        return Err(Error::InvalidArgument(format!("bad eigenvalue range ({lo}, {hi})")));
    }
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..dim {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(lo..=hi)));
    let a = &q * lambda * q.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// Draws the dataset; unit `j` uses the stream `derive_seed(seed, [j])`.
pub fn generate(spec: &SimSpec) -> Result<(CountTensor, Vec<usize>)> {
    spec.validate()?;
    let factors = spec
        .components
        .iter()
        .map(|c| c.factorize())
        .collect::<Result<Vec<_>>>()?;
    let log_s = spec.library_sizes()?.log_values();
    let choose = WeightedIndex::new(&spec.pi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut counts = Vec::with_capacity(spec.n * spec.r * spec.p);
    let mut labels = Vec::with_capacity(spec.n);
    for j in 0..spec.n {
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[j as u64]));
        let g = rng.sample(&choose);
        counts.extend(sample_counts(&spec.components[g], &factors[g], &log_s, &mut rng)?);
        labels.push(g);
    }
    Ok((CountTensor::from_counts(spec.r, spec.p, counts)?, labels))
}

/// Writes `counts.csv`, `labels.csv` and `spec.json` into `dir`.
pub fn write_dataset(dir: &Path, spec: &SimSpec, tensor: &CountTensor, labels: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_counts(dir.join("counts.csv"), tensor)?;
    write_labels(&dir.join("labels.csv"), tensor.unit_ids(), labels)?;
    let path = dir.join("spec.json");
    std::fs::write(&path, spec.to_json()? + "\n").map_err(|e| Error::io(&path, e))
}

/// `unit,label` CSV.
pub fn write_labels(path: &Path, unit_ids: &[String], labels: &[usize]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Writer::from_writer(std::io::BufWriter::new(file));
    csv.write_record(["unit", "label"])?;
    for (u, l) in unit_ids.iter().zip(labels) {
        csv.write_record([u.as_str(), &l.to_string()])?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `unit,label` CSV.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Reader::from_reader(file);
    csv.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            rec.get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    message: "invalid label".into(),
                })
        })
        .collect()
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// The three simulation settings at their published size (`n = 1000`).
pub fn preset(name: &str) -> Result<SimSpec> {
    let omega_a = matrix(3, 3, &[1.66, -0.61, 0.77, -0.61, 1.46, 0.17, 0.77, 0.17, 1.44]);
    let spec = match name {
        "sim1" => SimSpec {
            n: 1000,
            r: 2,
            p: 3,
            pi: vec![1.0],
            components: vec![MatNormParams::new(
                matrix(2, 3, &[6.0, 5.5, 6.0, 6.0, 5.5, 6.0]),
                matrix(2, 2, &[1.0, -0.55, -0.55, 1.27]),
                omega_a,
            )?],
            library_sizes: None,
            seed: 1,
            diagonal_only: false,
        },
        "sim2" => SimSpec {
            n: 1000,
            r: 2,
            p: 3,
            pi: vec![0.79, 0.21],
            components: vec![
                MatNormParams::new(
                    DMatrix::from_element(2, 3, 6.0),
                    matrix(2, 2, &[1.0, -0.62, -0.62, 1.4]),
                    omega_a,
                )?,
                MatNormParams::new(
                    DMatrix::from_element(2, 3, 1.0),
                    matrix(2, 2, &[1.0, 0.57, 0.57, 0.7]),
                    matrix(3, 3, &[0.7, -0.56, 0.39, -0.56, 0.7, -0.39, 0.39, -0.39, 0.7]),
                )?,
            ],
            library_sizes: None,
            seed: 2,
            diagonal_only: false,
        },
        "sim3" => SimSpec {
            n: 1000,
            r: 2,
            p: 3,
            pi: vec![0.6, 0.4],
            components: vec![
                MatNormParams::new(
                    DMatrix::from_element(2, 3, 6.2),
                    DMatrix::identity(2, 2),
                    matrix(3, 3, &[1.66, 0.0, 0.0, 0.0, 1.46, 0.0, 0.0, 0.0, 1.44]),
                )?,
                MatNormParams::new(
                    DMatrix::from_element(2, 3, 1.5),
                    matrix(2, 2, &[1.0, 0.0, 0.0, 0.7]),
                    matrix(3, 3, &[0.75, 0.0, 0.0, 0.0, 0.82, 0.0, 0.0, 0.0, 0.9]),
                )?,
            ],
            library_sizes: None,
            seed: 3,
            diagonal_only: true,
        },
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes a simulation spec as pretty JSON.
pub fn write_spec<W: Write>(mut writer: W, spec: &SimSpec) -> Result<()> {
    writer
        .write_all((spec.to_json()? + "\n").as_bytes())
        .map_err(|e| Error::io("<spec>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let s1 = preset("sim1").unwrap();
        assert_eq!(s1.components[0].mean[(0, 1)], 5.5);
        assert_eq!(s1.n, 1000);
        let s2 = preset("sim2").unwrap();
        assert_eq!(s2.pi, vec![0.79, 0.21]);
        let s3 = preset("sim3").unwrap();
        assert_eq!(s3.components[1].phi, matrix(2, 2, &[1.0, 0.0, 0.0, 0.7]));
        assert!(s3.diagonal_only);
        assert!(matches!(preset("sim9"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn random_spd_examples() {
        let mut rng = rng_from_seed(8);
        let a = random_spd(1, 0.5, 2.0, &mut rng).unwrap();
        assert!((0.5..=2.0).contains(&a[(0, 0)]));
        let a = random_spd(4, 1.0, 1.0, &mut rng).unwrap();
        assert!((a - DMatrix::identity(4, 4)).amax() < 1e-12);
        for _ in 0..20 {
            let a = random_spd(3, 0.5, 2.0, &mut rng).unwrap();
            let eig = a.clone().symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|&l| (0.5 - 1e-10..=2.0 + 1e-10).contains(&l)));
            assert_eq!(a, a.transpose());
        }
        assert!(random_spd(2, 0.0, 1.0, &mut rng).is_err());
        assert!(random_spd(2, 2.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = preset("sim2").unwrap().with_n(50);
        let (a, la) = generate(&spec).unwrap();
        let (b, lb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = generate(&spec.clone().with_seed(99)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn overflow_is_rejected() {
        let mut spec = preset("sim1").unwrap().with_n(5);
        spec.components[0].mean = DMatrix::from_element(2, 3, 800.0);
        assert!(matches!(generate(&spec), Err(Error::PoissonOverflow(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = preset("sim3").unwrap();
        spec.components[0].omega[(0, 1)] = 0.1;
        spec.components[0].omega[(1, 0)] = 0.1;
        assert!(spec.validate().is_err());
        let mut spec = preset("sim2").unwrap();
        spec.pi = vec![0.5, 0.6];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = preset("sim2").unwrap();
        let back: SimSpec = serde_json::from_str(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
