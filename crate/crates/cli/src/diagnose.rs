//! Convergence reports for latent chains, from a chain dump or by sampling
//! one unit under one component of a saved fit.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mvpln_core::diagnostics::{check_draws, heidelberger_welch, PSRF_THRESHOLD};
use mvpln_core::em::MixtureFit;
use mvpln_core::sampler::{read_chain_dump, sample_latent, write_chain_dump, Chain};
use mvpln_core::seed::{derive_seed, hash_label};

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::run::{create_dir, json_bytes, load_dataset, write_file};

/// Seed stream for diagnostic sampling, apart from those used by fits.
const DIAGNOSE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateReport {
    pub psrf: f64,
    pub ess: f64,
    /// Heidelberger–Welch result per chain.
    pub stationary: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub dim: usize,
    pub n_chains: usize,
    pub retained: usize,
    pub psrf_threshold: f64,
    pub max_psrf: f64,
    pub min_ess: f64,
    pub passed: bool,
    pub coordinates: Vec<CoordinateReport>,
}

pub fn report(chains: &[Chain], dim: usize, alpha: f64) -> Result<ChainReport, CliError> {
    if chains.len() < 2 {
        return Err(CliError::Data(format!(
            "{} chain(s); at least two are needed",
            chains.len()
        )));
    }
    let retained = chains[0].len(dim);
    if chains.iter().any(|c| c.len(dim) != retained) {
        return Err(CliError::Data("chains differ in length".into()));
    }
    let diag = check_draws(chains, dim)?;
    let coordinates = (0..dim)
        .map(|c| CoordinateReport {
            psrf: diag.psrf[c],
            ess: diag.ess[c],
            stationary: chains
                .iter()
                .map(|ch| {
                    let series: Vec<f64> = ch.draws.iter().skip(c).step_by(dim).copied().collect();
                    heidelberger_welch(&series, alpha).passed
                })
                .collect(),
        })
        .collect();
    Ok(ChainReport {
        dim,
        n_chains: chains.len(),
        retained,
        psrf_threshold: PSRF_THRESHOLD,
        max_psrf: diag.max_psrf(),
        min_ess: diag.min_ess(),
        passed: diag.passed,
        coordinates,
    })
}

/// Reads a chain dump and writes `report.json` into `out`.
pub fn diagnose_dump(dump: &Path, out: &Path, alpha: f64) -> Result<ChainReport, CliError> {
    let file = File::open(dump).map_err(|e| io_error(dump, e))?;
    let dumped = read_chain_dump(BufReader::new(file))?;
    let rep = report(&dumped.chains, dumped.dim, alpha)?;
    create_dir(out)?;
    write_file(&out.join("report.json"), &json_bytes(&rep))?;
    Ok(rep)
}

/// Samples the latent matrix of `unit` under component `component`
/// (1-based) of a saved fit, then writes `chains.csv` and `report.json`.
pub fn diagnose_fit(cfg: &RunConfig, fit_path: &Path, unit: &str, component: usize) -> Result<ChainReport, CliError> {
    let data = load_dataset(cfg, 0)?;
    let text = std::fs::read_to_string(fit_path).map_err(|e| io_error(fit_path, e))?;
    let fit: MixtureFit =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", fit_path.display())))?;
    if component == 0 || component > fit.components.len() {
        return Err(CliError::Usage(format!(
            "component {component} outside 1..={}",
            fit.components.len()
        )));
    }
    let j = data
        .tensor
        .unit_ids()
        .iter()
        .position(|u| u == unit)
        .ok_or_else(|| CliError::Usage(format!("unit {unit:?} not in the input")))?;
    let seed = derive_seed(cfg.seed, &[DIAGNOSE_STREAM, hash_label(unit), component as u64]);
    let chains = sample_latent(
        &data.tensor.unit_matrix(j),
        &data.s,
        &fit.components[component - 1],
        &cfg.fit_config().chain,
        seed,
    )?;
    create_dir(&cfg.out)?;
    let mut dump = Vec::new();
    write_chain_dump(&mut dump, &chains)?;
    write_file(&cfg.out.join("chains.csv"), &dump)?;
    let rep = report(&chains.chains, chains.dim(), cfg.fit_config().alpha)?;
    write_file(&cfg.out.join("report.json"), &json_bytes(&rep))?;
    Ok(rep)
}
