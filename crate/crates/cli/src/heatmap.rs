//! Per-cluster SVG heatmaps of row-standardized log counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvpln_core::tensor_io::CountTensor;

use crate::error::CliError;
use crate::run::{create_dir, write_file};

const CELL_WIDTH: usize = 36;
const HEADER_HEIGHT: usize = 90;
const LABEL_WIDTH: usize = 90;
/// z-scores beyond this saturate the colour scale.
const Z_LIMIT: f64 = 2.5;

/// Red for high, green for low, black at the row mean.
pub fn colour(z: f64) -> String {
    let t = (z / Z_LIMIT).clamp(-1.0, 1.0);
    let level = (t.abs() * 255.0).round() as u8;
    if t >= 0.0 {
        format!("#{level:02x}0000")
    } else {
        format!("#00{level:02x}00")
    }
}

/// `log(count + 1)` of each sample, centred and scaled within the row.
/// Constant rows map to zeros.
pub fn standardize_row(counts: &[u64]) -> Vec<f64> {
    let logs: Vec<f64> = counts.iter().map(|&c| (c as f64).ln_1p()).collect();
    if logs.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; logs.len()];
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    logs.iter().map(|v| (v - mean) / sd).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG for the given units, rows ordered by decreasing total count.
pub fn render_svg(tensor: &CountTensor, units: &[usize], title: &str) -> String {
    let mut rows = units.to_vec();
    rows.sort_by_key(|&j| std::cmp::Reverse(tensor.unit_counts(j).iter().sum::<u64>()));
    let rp = tensor.rp();
    let cell_height = if rows.len() <= 60 { 12 } else { 4 };
    let width = LABEL_WIDTH + rp * CELL_WIDTH + 10;
    let height = HEADER_HEIGHT + rows.len() * cell_height + 10;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(svg, r#"<title>{}</title>"#, escape(title)).unwrap();
    writeln!(
        svg,
        r#"<text x="4" y="14" font-size="12">{} ({} units)</text>"#,
        escape(title),
        rows.len()
    )
    .unwrap();
    for (c, name) in tensor.sample_ids().iter().enumerate() {
        let x = LABEL_WIDTH + c * CELL_WIDTH + CELL_WIDTH / 2;
        let y = HEADER_HEIGHT - 4;
        writeln!(
            svg,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(name)
        )
        .unwrap();
    }
    for (k, &j) in rows.iter().enumerate() {
        let y = HEADER_HEIGHT + k * cell_height;
        if cell_height >= 10 {
            writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                LABEL_WIDTH - 4,
                y + cell_height - 2,
                escape(&tensor.unit_ids()[j])
            )
            .unwrap();
        }
        for (c, z) in standardize_row(tensor.unit_counts(j)).into_iter().enumerate() {
            writeln!(
                svg,
                r#"<rect x="{}" y="{y}" width="{CELL_WIDTH}" height="{cell_height}" fill="{}"/>"#,
                LABEL_WIDTH + c * CELL_WIDTH,
                colour(z)
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `cluster_<k>.svg` (1-based) into `dir` for every label present.
pub fn emit_heatmaps(tensor: &CountTensor, labels: &[usize], dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if labels.len() != tensor.n() {
        return Err(CliError::Data(format!(
            "{} labels for {} units",
            labels.len(),
            tensor.n()
        )));
    }
    create_dir(dir)?;
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let mut paths = Vec::new();
    for k in present {
        let units: Vec<usize> = (0..tensor.n()).filter(|&j| labels[j] == k).collect();
        let path = dir.join(format!("cluster_{}.svg", k + 1));
        write_file(
            &path,
            render_svg(tensor, &units, &format!("Cluster {}", k + 1)).as_bytes(),
        )?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_scale() {
        assert_eq!(colour(0.0), "#000000");
        assert_eq!(colour(10.0), "#ff0000");
        assert_eq!(colour(-10.0), "#00ff00");
    }

    #[test]
    fn constant_rows_sit_mid_scale() {
        assert_eq!(standardize_row(&[5, 5, 5]), vec![0.0; 3]);
        assert_eq!(standardize_row(&[7]), vec![0.0]);
        let z = standardize_row(&[0, 10, 100]);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!(z[0] < z[1] && z[1] < z[2]);
    }

    #[test]
    fn one_file_per_cluster() {
        let tensor = CountTensor::from_counts(1, 2, vec![1, 2, 0, 0, 5, 3, 9, 9]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_heatmaps(&tensor, &[0, 1, 1, 1], dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        let single = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(single.matches("<rect").count(), 2);
        assert!(!single.contains("#000000"));
        let rest = std::fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(rest.matches("<rect").count(), 6);
        assert!(rest.contains("#000000"));
        assert!(emit_heatmaps(&tensor, &[0, 1], dir.path()).is_err());
    }
}
