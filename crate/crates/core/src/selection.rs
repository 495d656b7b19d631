//! Free-parameter counts, information criteria, model choice across `G`,
//! and the adjusted Rand index.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::em::Responsibilities;
use crate::error::{Error, Result};

/// Covariance structure whose parameters are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Kronecker covariance `Φ ⊗ Ω` per component.
    Mvpln,
    /// Unstructured `rp × rp` covariance per component.
    Mpln,
}

/// Number of free parameters of a `G`-component mixture.
pub fn count_free_params(g: usize, r: usize, p: usize, family: Family) -> usize {
    let rp = r * p;
    let shared = (g - 1) + g * rp;
    match family {
        Family::Mvpln => shared + g * (r * (r + 1) + p * (p + 1)) / 2,
        Family::Mpln => shared + g * rp * (rp + 1) / 2,
    }
}

/// The four criteria of one fit; all are minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub aic: f64,
    pub bic: f64,
    pub aic3: f64,
    pub icl: f64,
}

/// AIC, BIC, AIC3 and ICL, the last being BIC plus twice the sum over units
/// of the log responsibility of the MAP component.
pub fn criteria(loglik: f64, k: usize, n: usize, z: &Responsibilities) -> Criteria {
    let kf = k as f64;
    let deviance = -2.0 * loglik;
    let bic = deviance + kf * (n as f64).ln();
    let labels = z.hard_labels();
    let map_term: f64 = labels
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let v = z.get(j, g);
            if v > 0.0 {
                v.ln()
            } else {
                0.0
            }
        })
        .sum();
    Criteria {
        aic: deviance + 2.0 * kf,
        bic,
        aic3: deviance + 3.0 * kf,
        icl: bic + 2.0 * map_term,
    }
}

/// One row of the selection table. Failed fits keep their error message
/// and carry no criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub final_loglik: Option<f64>,
    pub criteria: Option<Criteria>,
    pub converged: bool,
    pub ari: Option<f64>,
    pub error: Option<String>,
}

impl SelectionRow {
    fn eligible(&self) -> Option<&Criteria> {
        if self.converged {
            self.criteria.as_ref()
        } else {
            None
        }
    }
}

/// The `G` chosen by each criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chosen {
    pub aic: usize,
    pub bic: usize,
    pub aic3: usize,
    pub icl: usize,
}

/// Per criterion, the converged row with the smallest value; ties go to the
/// smaller `G`.
pub fn select(rows: &[SelectionRow]) -> Result<Chosen> {
    let pick = |f: fn(&Criteria) -> f64| -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for row in rows {
            if let Some(c) = row.eligible() {
                let v = f(c);
                let better = match best {
                    None => true,
                    Some((g, b)) => v < b || (v == b && row.g < g),
                };
                if better {
                    best = Some((row.g, v));
                }
            }
        }
        best.map(|(g, _)| g).ok_or(Error::NoConvergedFits)
    };
    Ok(Chosen {
        aic: pick(|c| c.aic)?,
        bic: pick(|c| c.bic)?,
        aic3: pick(|c| c.aic3)?,
        icl: pick(|c| c.icl)?,
    })
}

/// Per-`G` criteria plus the choices they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    /// `None` when no fit converged.
    pub chosen: Option<Chosen>,
}

impl SelectionTable {
    pub fn new(mut rows: Vec<SelectionRow>) -> Self {
        rows.sort_by_key(|r| r.g);
        let chosen = select(&rows).ok();
        SelectionTable { rows, chosen }
    }

    /// One CSV row per `G`; empty fields for missing values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "G",
            "K",
            "loglik",
            "AIC",
            "BIC",
            "AIC3",
            "ICL",
            "converged",
            "ARI",
            "error",
        ])?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let c = row.criteria;
            csv.write_record([
                row.g.to_string(),
                row.k.to_string(),
                num(row.final_loglik),
                num(c.map(|c| c.aic)),
                num(c.map(|c| c.bic)),
                num(c.map(|c| c.aic3)),
                num(c.map(|c| c.icl)),
                row.converged.to_string(),
                num(row.ari),
                row.error.clone().unwrap_or_default(),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("<selection table>", e))?;
        Ok(())
    }

    /// Fixed-width text rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>3} {:>5} {:>14} {:>14} {:>14} {:>14} {:>14} {:>9} {:>6}\n",
            "G", "K", "loglik", "AIC", "BIC", "AIC3", "ICL", "converged", "ARI"
        );
        for row in &self.rows {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            let c = row.criteria;
            out.push_str(&format!(
                "{:>3} {:>5} {:>14} {:>14} {:>14} {:>14} {:>14} {:>9} {:>6}",
                row.g,
                row.k,
                f(row.final_loglik),
                f(c.map(|c| c.aic)),
                f(c.map(|c| c.bic)),
                f(c.map(|c| c.aic3)),
                f(c.map(|c| c.icl)),
                row.converged,
                row.ari.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
            ));
            if let Some(e) = &row.error {
                out.push_str(&format!("  error: {e}"));
            }
            out.push('\n');
        }
        match &self.chosen {
            Some(c) => out.push_str(&format!(
                "chosen G: AIC={} BIC={} AIC3={} ICL={}\n",
                c.aic, c.bic, c.aic3, c.icl
            )),
            None => out.push_str("no converged fits\n"),
        }
        out
    }
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Hubert–Arabie adjusted Rand index between two labelings.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Dimension(format!(
            "labelings have lengths {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as u64;
    if n < 2 {
        return Err(Error::InvalidArgument("ari needs at least two items".into()));
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions are all-singletons or a single block
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// ARI between the MAP labels of `z` and reference labels.
pub fn ari_against(z: &Responsibilities, reference: &[usize]) -> Result<f64> {
    ari(&z.hard_labels(), reference)
}
