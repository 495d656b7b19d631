//! Replicated simulation studies: generate, fit the `G` range, summarize
//! the choices of every criterion across replicates.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mvpln_core::selection::SelectionTable;
use mvpln_core::simgen::write_dataset;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::write_manifest;
use crate::run::{fit_one, json_bytes, load_dataset, write_file, write_outputs, Dataset, Outcome};

pub const CRITERIA: [&str; 4] = ["AIC", "BIC", "AIC3", "ICL"];

/// What one criterion selected across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: String,
    /// Chosen `G` to number of replicates; replicates without any converged
    /// fit are counted under `failed`.
    pub chosen: BTreeMap<usize, usize>,
    pub failed: usize,
    /// ARI of the chosen fit against the true labels.
    pub ari_mean: Option<f64>,
    pub ari_sd: Option<f64>,
}

impl CriterionSummary {
    pub fn modal_g(&self) -> Option<usize> {
        let best = self.chosen.values().copied().max()?;
        self.chosen.iter().find(|(_, &c)| c == best).map(|(&g, _)| g)
    }

    /// `G (mean ARI, sd)` when one `G` was always chosen, otherwise every
    /// chosen `G` with its count.
    pub fn table_cell(&self) -> String {
        let ari = match (self.ari_mean, self.ari_sd) {
            (Some(m), Some(s)) => format!(" ({m:.2}, {s:.2})"),
            _ => String::new(),
        };
        let picks: Vec<String> = if self.chosen.len() == 1 && self.failed == 0 {
            vec![self.chosen.keys().next().expect("one entry").to_string()]
        } else {
            let mut v: Vec<String> = self.chosen.iter().map(|(g, c)| format!("{g} x{c}")).collect();
            if self.failed > 0 {
                v.push(format!("none x{}", self.failed));
            }
            v
        };
        format!("{}{ari}", picks.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub preset: String,
    pub replicates: usize,
    pub n: usize,
    pub criteria: Vec<CriterionSummary>,
}

impl SimSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "preset {}: {} replicates of n = {}\nnumber of clusters selected (average ARI, standard deviation)\n",
            self.preset, self.replicates, self.n
        );
        for c in &self.criteria {
            out.push_str(&format!("{:>5}  {}\n", c.criterion, c.table_cell()));
        }
        out
    }
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

/// Aggregates one selection table per replicate.
pub fn summarize(preset: &str, n: usize, tables: &[SelectionTable]) -> SimSummary {
    let criteria = CRITERIA
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut chosen = BTreeMap::new();
            let mut failed = 0;
            let mut aris = Vec::new();
            for table in tables {
                let Some(ch) = table.chosen else {
                    failed += 1;
                    continue;
                };
                let g = [ch.aic, ch.bic, ch.aic3, ch.icl][i];
                *chosen.entry(g).or_insert(0) += 1;
                if let Some(a) = table.rows.iter().find(|r| r.g == g).and_then(|r| r.ari) {
                    aris.push(a);
                }
            }
            let stats = mean_sd(&aris);
            CriterionSummary {
                criterion: name.to_string(),
                chosen,
                failed,
                ari_mean: stats.map(|s| s.0),
                ari_sd: stats.map(|s| s.1),
            }
        })
        .collect();
    SimSummary {
        preset: preset.to_string(),
        replicates: tables.len(),
        n,
        criteria,
    }
}

/// The `simulate` subcommand. Every `(replicate, G)` pair is one task on
/// the worker pool; replicate `k` is written to `rep_<k>/` (1-based).
pub fn run_sim(cfg: &RunConfig) -> Result<SimSummary, CliError> {
    cfg.validate()?;
    let Some(preset) = cfg.preset.clone() else {
        return Err(CliError::Usage("simulate needs --preset".into()));
    };
    let pool = crate::run::thread_pool(cfg.jobs)?;
    let datasets: Vec<Dataset> = (0..cfg.replicates)
        .map(|k| load_dataset(cfg, k))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.replicates)
        .flat_map(|k| (cfg.g_min..=cfg.g_max).map(move |g| (k, g)))
        .collect();
    let outcomes: Vec<Outcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, g)| fit_one(&datasets[k], cfg, k, g))
            .collect()
    });

    let per_replicate = cfg.g_max - cfg.g_min + 1;
    let mut outcomes = outcomes.into_iter();
    let mut tables = Vec::with_capacity(cfg.replicates);
    let mut files = Vec::new();
    for (k, data) in datasets.iter().enumerate() {
        let sub = PathBuf::from(format!("rep_{:03}", k + 1));
        let dir = cfg.out.join(&sub);
        let mine: Vec<Outcome> = outcomes.by_ref().take(per_replicate).collect();
        let (table, written) = write_outputs(&dir, data, &mine, cfg.heatmaps)?;
        let spec = data.spec.as_ref().expect("simulated data");
        write_dataset(
            &dir,
            spec,
            &data.tensor,
            data.truth.as_deref().expect("simulated labels"),
        )?;
        files.extend(written.into_iter().map(|f| sub.join(f)));
        for f in ["counts.csv", "labels.csv", "spec.json"] {
            files.push(sub.join(f));
        }
        tables.push(table);
    }
    let n = datasets.first().map_or(0, |d| d.tensor.n());
    let summary = summarize(&preset, n, &tables);
    write_file(&cfg.out.join("summary.json"), &json_bytes(&summary))?;
    write_file(&cfg.out.join("summary.txt"), summary.render().as_bytes())?;
    files.push(PathBuf::from("summary.json"));
    files.push(PathBuf::from("summary.txt"));
    write_manifest(&cfg.out, cfg, &files)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvpln_core::selection::{Chosen, Criteria, SelectionRow};

    fn table(chosen_g: usize, ari: f64) -> SelectionTable {
        let rows = (1..=3)
            .map(|g| SelectionRow {
                g,
                k: g,
                final_loglik: Some(0.0),
                criteria: Some(Criteria {
                    aic: if g == chosen_g { -1.0 } else { 0.0 },
                    bic: if g == chosen_g { -1.0 } else { 0.0 },
                    aic3: if g == chosen_g { -1.0 } else { 0.0 },
                    icl: if g == chosen_g { -1.0 } else { 0.0 },
                }),
                converged: true,
                ari: Some(if g == chosen_g { ari } else { 0.0 }),
                error: None,
            })
            .collect();
        let t = SelectionTable::new(rows);
        assert_eq!(
            t.chosen,
            Some(Chosen {
                aic: chosen_g,
                bic: chosen_g,
                aic3: chosen_g,
                icl: chosen_g
            })
        );
        t
    }

    #[test]
    fn single_replicate_summary_is_that_replicate() {
        let s = summarize("sim3", 200, &[table(2, 0.98)]);
        for c in &s.criteria {
            assert_eq!(c.chosen, BTreeMap::from([(2, 1)]));
            assert_eq!(c.ari_mean, Some(0.98));
            assert_eq!(c.ari_sd, Some(0.0));
            assert_eq!(c.table_cell(), "2 (0.98, 0.00)");
        }
    }

    #[test]
    fn identical_replicates_have_zero_spread() {
        let s = summarize("sim3", 200, &[table(2, 1.0), table(2, 1.0), table(2, 1.0)]);
        assert_eq!(s.criteria[0].ari_sd, Some(0.0));
        assert_eq!(s.criteria[0].table_cell(), "2 (1.00, 0.00)");
    }

    #[test]
    fn mixed_choices_are_listed() {
        let s = summarize("sim3", 200, &[table(2, 1.0), table(3, 0.8), table(2, 0.9)]);
        let c = &s.criteria[1];
        assert_eq!(c.modal_g(), Some(2));
        assert_eq!(c.table_cell(), "2 x2, 3 x1 (0.90, 0.10)");
        assert!(s.render().contains("  BIC  2 x2, 3 x1"));
    }

    #[test]
    fn mean_sd_examples() {
        assert_eq!(mean_sd(&[]), None);
        assert_eq!(mean_sd(&[3.0]), Some((3.0, 0.0)));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
