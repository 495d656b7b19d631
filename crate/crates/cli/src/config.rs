//! Run configuration: a JSON file mirrored by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mvpln_core::em::FitConfig;
use mvpln_core::init::InitMethod;
use mvpln_core::sampler::ChainConfig;

use crate::error::CliError;

/// Library-size source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Norm {
    Tmm,
    Total,
    File(PathBuf),
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tmm" => Ok(Norm::Tmm),
            "total" => Ok(Norm::Total),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(Norm::File(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown normalization {s:?} (expected tmm, total or file:PATH)"
                )),
            },
        }
    }
}

impl TryFrom<String> for Norm {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Tmm => f.write_str("tmm"),
            Norm::Total => f.write_str("total"),
            Norm::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl From<Norm> for String {
    fn from(n: Norm) -> String {
        n.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Count CSV. Either this or `preset` names the data.
    pub input: Option<PathBuf>,
    /// Simulation preset (`sim1`, `sim2`, `sim3`).
    pub preset: Option<String>,
    /// Units per simulated dataset; the preset's own size when absent.
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub p: Option<usize>,
    pub g_min: usize,
    pub g_max: usize,
    pub init: InitMethod,
    pub init_runs: usize,
    pub chains: usize,
    pub iters: usize,
    /// `None`: TMM for files, the generating sizes for presets.
    pub norm: Option<Norm>,
    pub seed: u64,
    pub out: PathBuf,
    pub replicates: usize,
    pub jobs: usize,
    pub max_outer_iterations: usize,
    pub heatmaps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        RunConfig {
            input: None,
            preset: None,
            n: None,
            r: None,
            p: None,
            g_min: 1,
            g_max: 3,
            init: InitMethod::Kmeans,
            init_runs: 3,
            chains: fit.chain.n_chains,
            iters: fit.chain.n_iter,
            norm: None,
            seed: 1,
            out: PathBuf::from("mvpln-out"),
            replicates: 1,
            jobs: 1,
            max_outer_iterations: fit.max_outer_iterations,
            heatmaps: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.g_min < 1 || self.g_min > self.g_max {
            return usage(format!("need 1 <= g-min <= g-max, got {}..{}", self.g_min, self.g_max));
        }
        if self.jobs < 1 {
            return usage("jobs must be at least 1".into());
        }
        if self.replicates < 1 {
            return usage("replicates must be at least 1".into());
        }
        if self.init_runs < 1 {
            return usage("init-runs must be at least 1".into());
        }
        if self.max_outer_iterations < 1 {
            return usage("max-outer-iterations must be at least 1".into());
        }
        match (&self.input, &self.preset) {
            (Some(_), Some(_)) => return usage("give either --input or --preset, not both".into()),
            (Some(_), None) if self.r.is_none() || self.p.is_none() => {
                return usage("--input needs --r and --p".into());
            }
            _ => {}
        }
        self.fit_config()
            .chain
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn fit_config(&self) -> FitConfig {
        let defaults = FitConfig::default();
        FitConfig {
            chain: ChainConfig {
                n_chains: self.chains,
                n_iter: self.iters,
                ..defaults.chain.clone()
            },
            max_outer_iterations: self.max_outer_iterations,
            ..defaults
        }
    }

    /// The configuration as recorded in the manifest: everything that can
    /// change results, so neither `jobs` nor `out`.
    pub fn resolved_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("jobs");
            map.remove("out");
        }
        value
    }
}
