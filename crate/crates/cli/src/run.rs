//! Fitting every `G` of a range and writing the results.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use mvpln_core::em::{fit_mixture, MixtureFit};
use mvpln_core::init::{initialize, InitSpec};
use mvpln_core::seed::derive_seed;
use mvpln_core::selection::{ari, count_free_params, criteria, Family, SelectionRow, SelectionTable};
use mvpln_core::simgen::{generate, preset, write_labels, SimSpec};
use mvpln_core::tensor_io::{compute_library_sizes, load_counts, CountTensor, LibrarySizes, NormMethod};

use crate::config::{Norm, RunConfig};
use crate::error::{io_error, CliError};
use crate::heatmap::emit_heatmaps;
use crate::manifest::write_manifest;

/// Seed streams below the run seed.
const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const FIT_STREAM: u64 = 2;

/// Counts, library sizes and, for simulated data, the true labels.
pub struct Dataset {
    pub tensor: CountTensor,
    pub s: LibrarySizes,
    pub truth: Option<Vec<usize>>,
    pub spec: Option<SimSpec>,
}

pub fn library_sizes(tensor: &CountTensor, norm: &Norm) -> Result<LibrarySizes, CliError> {
    let s = match norm {
        Norm::Tmm => compute_library_sizes(tensor, NormMethod::Tmm)?,
        Norm::Total => compute_library_sizes(tensor, NormMethod::TotalCount)?,
        Norm::File(path) => LibrarySizes::load(path)?,
    };
    s.check_len(tensor.rp())?;
    Ok(s)
}

/// The simulation spec of replicate `replicate` of the configured preset.
pub fn replicate_spec(cfg: &RunConfig, name: &str, replicate: usize) -> Result<SimSpec, CliError> {
    let mut spec = preset(name)?.with_seed(derive_seed(cfg.seed, &[DATA_STREAM, replicate as u64]));
    if let Some(n) = cfg.n {
        spec = spec.with_n(n);
    }
    if let (Some(r), Some(p)) = (cfg.r, cfg.p) {
        if (r, p) != (spec.r, spec.p) {
            return Err(CliError::Usage(format!(
                "preset {name} is {}x{}, not {r}x{p}",
                spec.r, spec.p
            )));
        }
    }
    Ok(spec)
}

/// Loads the configured input file, or simulates replicate `replicate` of
/// the configured preset.
pub fn load_dataset(cfg: &RunConfig, replicate: usize) -> Result<Dataset, CliError> {
    match (&cfg.input, &cfg.preset) {
        (Some(path), _) => {
            let (r, p) = (cfg.r.unwrap_or(0), cfg.p.unwrap_or(0));
            let tensor = load_counts(path, r, p)?;
            let s = library_sizes(&tensor, cfg.norm.as_ref().unwrap_or(&Norm::Tmm))?;
            Ok(Dataset {
                tensor,
                s,
                truth: None,
                spec: None,
            })
        }
        (None, Some(name)) => {
            let spec = replicate_spec(cfg, name, replicate)?;
            let (tensor, labels) = generate(&spec)?;
            let s = match &cfg.norm {
                Some(norm) => library_sizes(&tensor, norm)?,
                None => spec.library_sizes()?,
            };
            Ok(Dataset {
                tensor,
                s,
                truth: Some(labels),
                spec: Some(spec),
            })
        }
        (None, None) => Err(CliError::Usage("either --input or --preset is required".into())),
    }
}

/// The fit of one `G`, or why it failed.
pub struct Outcome {
    pub g: usize,
    pub fit: Result<MixtureFit, String>,
}

/// Initializes and fits one `G` with seeds derived from
/// `(seed, replicate, G)` only.
pub fn fit_one(data: &Dataset, cfg: &RunConfig, replicate: usize, g: usize) -> Outcome {
    let key = |stream: u64| derive_seed(cfg.seed, &[stream, replicate as u64, g as u64]);
    let init = InitSpec {
        method: cfg.init,
        runs: cfg.init_runs,
        seed: key(INIT_STREAM),
    };
    let fit = initialize(&data.tensor, &data.s, g, &init)
        .and_then(|z| fit_mixture(&data.tensor, &data.s, &z, &cfg.fit_config(), key(FIT_STREAM)))
        .map_err(|e| e.to_string());
    Outcome { g, fit }
}

pub fn selection_row(data: &Dataset, outcome: &Outcome) -> SelectionRow {
    let (r, p, n) = (data.tensor.r(), data.tensor.p(), data.tensor.n());
    let k = count_free_params(outcome.g, r, p, Family::Mvpln);
    match &outcome.fit {
        Ok(fit) => SelectionRow {
            g: outcome.g,
            k,
            final_loglik: Some(fit.final_loglik),
            criteria: Some(criteria(fit.final_loglik, k, n, &fit.z)),
            converged: fit.converged,
            ari: data.truth.as_ref().and_then(|t| ari(&fit.hard_labels, t).ok()),
            error: None,
        },
        Err(e) => SelectionRow {
            g: outcome.g,
            k,
            final_loglik: None,
            criteria: None,
            converged: false,
            ari: None,
            error: Some(e.clone()),
        },
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

/// Fits every `G` of the range; results come back in `G` order whatever
/// the scheduling.
pub fn fit_range(data: &Dataset, cfg: &RunConfig, replicate: usize) -> Vec<Outcome> {
    (cfg.g_min..=cfg.g_max)
        .into_par_iter()
        .map(|g| fit_one(data, cfg, replicate, g))
        .collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn trace_csv(fit: &MixtureFit) -> Vec<u8> {
    let mut out = b"iteration,loglik\n".to_vec();
    for (t, v) in fit.loglik_trace.iter().enumerate() {
        writeln!(out, "{},{v:?}", t + 1).expect("write to vec");
    }
    out
}

/// Writes the selection table, per-`G` fits, labels and traces into `dir`.
/// Returns the table and the written files relative to `dir`.
pub fn write_outputs(
    dir: &Path,
    data: &Dataset,
    outcomes: &[Outcome],
    heatmaps: bool,
) -> Result<(SelectionTable, Vec<PathBuf>), CliError> {
    create_dir(dir)?;
    let mut files = Vec::new();
    for outcome in outcomes {
        let Ok(fit) = &outcome.fit else { continue };
        let g = outcome.g;
        let name = format!("fit_G{g}.json");
        write_file(&dir.join(&name), &json_bytes(fit))?;
        files.push(PathBuf::from(name));
        let name = format!("labels_G{g}.csv");
        write_labels(&dir.join(&name), data.tensor.unit_ids(), &fit.hard_labels)?;
        files.push(PathBuf::from(name));
        let name = format!("loglik_G{g}.csv");
        write_file(&dir.join(&name), &trace_csv(fit))?;
        files.push(PathBuf::from(name));
        if heatmaps {
            let sub = PathBuf::from(format!("heatmaps_G{g}"));
            for path in emit_heatmaps(&data.tensor, &fit.hard_labels, &dir.join(&sub))? {
                files.push(sub.join(path.file_name().expect("file path")));
            }
        }
    }
    let table = SelectionTable::new(outcomes.iter().map(|o| selection_row(data, o)).collect());
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_file(&dir.join("selection.csv"), &csv)?;
    write_file(&dir.join("selection.json"), &json_bytes(&table))?;
    files.push(PathBuf::from("selection.csv"));
    files.push(PathBuf::from("selection.json"));
    Ok((table, files))
}

/// Summary of a `fit` run.
pub struct FitReport {
    pub table: SelectionTable,
    pub out: PathBuf,
}

/// The `fit` subcommand: fits the range on the configured data and writes
/// all outputs plus a manifest. Fails with [`CliError::Fit`] only when every
/// `G` failed, after the outputs are written.
pub fn run_fit(cfg: &RunConfig) -> Result<FitReport, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg, 0)?;
    let pool = thread_pool(cfg.jobs)?;
    let outcomes = pool.install(|| fit_range(&data, cfg, 0));
    let (table, mut files) = write_outputs(&cfg.out, &data, &outcomes, cfg.heatmaps)?;
    if let Some(spec) = &data.spec {
        write_file(&cfg.out.join("spec.json"), &json_bytes(spec))?;
        write_labels(
            &cfg.out.join("truth.csv"),
            data.tensor.unit_ids(),
            data.truth.as_deref().unwrap_or(&[]),
        )?;
        files.push(PathBuf::from("spec.json"));
        files.push(PathBuf::from("truth.csv"));
    }
    write_manifest(&cfg.out, cfg, &files)?;
    if outcomes.iter().all(|o| o.fit.is_err()) {
        let reasons: BTreeMap<usize, &str> = outcomes
            .iter()
            .filter_map(|o| o.fit.as_ref().err().map(|e| (o.g, e.as_str())))
            .collect();
        return Err(CliError::Fit(format!("every G failed: {reasons:?}")));
    }
    Ok(FitReport {
        table,
        out: cfg.out.clone(),
    })
}
