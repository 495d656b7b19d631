//! Three-way count tensors: loading, writing, vectorization and library sizes.
//!
//! A unit's `r × p` count matrix is vectorized row-major: element `(i, k)`
//! (zero-based) lands at index `i·p + k`, so all `p` variables of occasion 1
//! come first, then occasion 2, and so on. CSV files use the same order for
//! their `r·p` count columns.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Scalar};

use crate::error::{CountErrorKind, Error, Result};

/// Separator between occasion and variable in sample column names written by
/// [`write_counts`].
pub const SAMPLE_SEPARATOR: char = ':';

/// An `n × r × p` array of counts with labels for every mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTensor {
    n: usize,
    r: usize,
    p: usize,
    /// Unit-major, then row-major within a unit.
    counts: Vec<u64>,
    unit_ids: Vec<String>,
    occasion_ids: Vec<String>,
    variable_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl CountTensor {
    /// Builds a tensor from per-unit vectorized counts, generating
    /// `occasion:variable` sample names.
    pub fn new(
        r: usize,
        p: usize,
        counts: Vec<u64>,
        unit_ids: Vec<String>,
        occasion_ids: Vec<String>,
        variable_ids: Vec<String>,
    ) -> Result<Self> {
        let sample_ids = occasion_ids
            .iter()
            .flat_map(|o| variable_ids.iter().map(move |v| format!("{o}{SAMPLE_SEPARATOR}{v}")))
            .collect();
        Self::with_sample_ids(r, p, counts, unit_ids, occasion_ids, variable_ids, sample_ids)
    }

    /// Builds a tensor with default labels (`u1…`, `o1…`, `v1…`).
    pub fn from_counts(r: usize, p: usize, counts: Vec<u64>) -> Result<Self> {
        if r == 0 || p == 0 {
            return Err(Error::Dimension("r and p must be at least 1".into()));
        }
        let n = counts.len() / (r * p);
        Self::new(
            r,
            p,
            counts,
            (1..=n).map(|j| format!("u{j}")).collect(),
            (1..=r).map(|i| format!("o{i}")).collect(),
            (1..=p).map(|k| format!("v{k}")).collect(),
        )
    }

    fn with_sample_ids(
        r: usize,
        p: usize,
        counts: Vec<u64>,
        unit_ids: Vec<String>,
        occasion_ids: Vec<String>,
        variable_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if r == 0 || p == 0 {
            return Err(Error::Dimension("r and p must be at least 1".into()));
        }
        let n = unit_ids.len();
        if n == 0 {
            return Err(Error::Dimension("tensor needs at least one unit".into()));
        }
        if counts.len() != n * r * p {
            return Err(Error::Dimension(format!(
                "{} counts for n={n}, r={r}, p={p}",
                counts.len()
            )));
        }
        if occasion_ids.len() != r || variable_ids.len() != p || sample_ids.len() != r * p {
            return Err(Error::Dimension("label vectors do not match r and p".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateUnit(id.clone()));
            }
        }
        Ok(CountTensor {
            n,
            r,
            p,
            counts,
            unit_ids,
            occasion_ids,
            variable_ids,
            sample_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of samples, `r·p`.
    pub fn rp(&self) -> usize {
        self.r * self.p
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn occasion_ids(&self) -> &[String] {
        &self.occasion_ids
    }

    pub fn variable_ids(&self) -> &[String] {
        &self.variable_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Vectorized counts of unit `j`.
    pub fn unit_counts(&self, j: usize) -> &[u64] {
        let rp = self.rp();
        &self.counts[j * rp..(j + 1) * rp]
    }

    /// Vectorized counts of unit `j` as reals.
    pub fn unit_vector(&self, j: usize) -> Vec<f64> {
        self.unit_counts(j).iter().map(|&c| c as f64).collect()
    }

    /// Unit `j` as an `r × p` matrix.
    pub fn unit_matrix(&self, j: usize) -> DMatrix<f64> {
        devectorize(&self.unit_vector(j), self.r, self.p)
    }

    /// Column totals of the `r·p` samples.
    pub fn sample_totals(&self) -> Vec<f64> {
        let rp = self.rp();
        let mut totals = vec![0.0; rp];
        for row in self.counts.chunks_exact(rp) {
            for (t, &c) in totals.iter_mut().zip(row) {
                *t += c as f64;
            }
        }
        totals
    }

    /// Reorders units; `order[k]` is the old index of the new unit `k`.
    pub fn permute_units(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n {
            return Err(Error::Dimension("permutation length differs from n".into()));
        }
        let mut counts = Vec::with_capacity(self.counts.len());
        let mut unit_ids = Vec::with_capacity(self.n);
        for &j in order {
            counts.extend_from_slice(self.unit_counts(j));
            unit_ids.push(self.unit_ids[j].clone());
        }
        Self::with_sample_ids(
            self.r,
            self.p,
            counts,
            unit_ids,
            self.occasion_ids.clone(),
            self.variable_ids.clone(),
            self.sample_ids.clone(),
        )
    }
}

/// Row-major stacking of an `r × p` matrix into a length-`rp` vector.
pub fn vectorize_unit<T: Scalar + Copy>(m: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            out.push(m[(i, k)]);
        }
    }
    out
}

/// Inverse of [`vectorize_unit`].
///
/// # Panics
///
/// Panics if `v.len() != r * p`.
pub fn devectorize(v: &[f64], r: usize, p: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), r * p, "vector length must equal r*p");
    DMatrix::from_row_slice(r, p, v)
}

fn parse_count(raw: &str, line: usize, column: usize) -> Result<u64> {
    let field = raw.trim();
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    let bad = |kind| Error::InvalidCount {
        line,
        column,
        kind,
        value: field.to_string(),
    };
    match field.parse::<f64>() {
        Ok(v) if !v.is_finite() => Err(bad(CountErrorKind::NonNumeric)),
        Ok(v) if v < 0.0 => Err(bad(CountErrorKind::Negative)),
        Ok(v) if v.fract() != 0.0 => Err(bad(CountErrorKind::Fractional)),
        Ok(v) if v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(bad(CountErrorKind::NonNumeric)),
    }
}

/// Splits sample names of the form `occasion:variable` into a consistent
/// occasion × variable grid, if they have that shape.
fn split_sample_ids(samples: &[String], r: usize, p: usize) -> Option<(Vec<String>, Vec<String>)> {
    let parts: Vec<(&str, &str)> = samples
        .iter()
        .map(|s| s.split_once(SAMPLE_SEPARATOR))
        .collect::<Option<_>>()?;
    let occasions: Vec<String> = (0..r).map(|i| parts[i * p].0.to_string()).collect();
    let variables: Vec<String> = (0..p).map(|k| parts[k].1.to_string()).collect();
    for i in 0..r {
        for k in 0..p {
            let (o, v) = parts[i * p + k];
            if o != occasions[i] || v != variables[k] {
                return None;
            }
        }
    }
    Some((occasions, variables))
}

/// Reads a count CSV: a header row, then one unit per row with the unit id
/// first and `r·p` counts in vectorization order.
pub fn read_counts<R: Read>(reader: R, r: usize, p: usize) -> Result<CountTensor> {
    if r == 0 || p == 0 {
        return Err(Error::Dimension("r and p must be at least 1".into()));
    }
    let rp = r * p;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() != rp + 1 {
        return Err(Error::Dimension(format!(
            "header has {} count columns, expected r*p = {rp}",
            header.len().saturating_sub(1)
        )));
    }
    let sample_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::new();
    let mut unit_ids = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let line = row + 2;
        if record.len() != rp + 1 {
            return Err(Error::Dimension(format!(
                "line {line} has {} count columns, expected r*p = {rp}",
                record.len().saturating_sub(1)
            )));
        }
        unit_ids.push(record[0].to_string());
        for (c, raw) in record.iter().skip(1).enumerate() {
            counts.push(parse_count(raw, line, c + 2)?);
        }
    }
    let (occasion_ids, variable_ids) = split_sample_ids(&sample_ids, r, p).unwrap_or_else(|| {
        (
            (1..=r).map(|i| format!("o{i}")).collect(),
            (1..=p).map(|k| format!("v{k}")).collect(),
        )
    });
    CountTensor::with_sample_ids(r, p, counts, unit_ids, occasion_ids, variable_ids, sample_ids)
}

/// Loads a count CSV from `path`.
pub fn load_counts(path: impl AsRef<Path>, r: usize, p: usize) -> Result<CountTensor> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_counts(std::io::BufReader::new(file), r, p)
}

/// Writes `tensor` in the format accepted by [`read_counts`].
pub fn write_counts<W: Write>(writer: W, tensor: &CountTensor) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["unit_id".to_string()];
    header.extend(tensor.sample_ids.iter().cloned());
    csv.write_record(&header)?;
    for j in 0..tensor.n {
        let mut record = Vec::with_capacity(tensor.rp() + 1);
        record.push(tensor.unit_ids[j].clone());
        record.extend(tensor.unit_counts(j).iter().map(u64::to_string));
        csv.write_record(&record)?;
    }
    csv.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn save_counts(path: impl AsRef<Path>, tensor: &CountTensor) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_counts(std::io::BufWriter::new(file), tensor)
}

/// Per-sample library sizes `s_c`, one per vectorized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LibrarySizes(Vec<f64>);

impl LibrarySizes {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidLibrarySizes("empty vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidLibrarySizes(format!(
                "entry {bad} is not strictly positive and finite"
            )));
        }
        Ok(LibrarySizes(values))
    }

    /// All-ones library sizes for `rp` samples.
    pub fn unit(rp: usize) -> Self {
        LibrarySizes(vec![1.0; rp])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.ln()).collect()
    }

    /// Checks the length against a tensor's `r·p`.
    pub fn check_len(&self, rp: usize) -> Result<()> {
        if self.0.len() != rp {
            return Err(Error::Dimension(format!(
                "{} library sizes for {rp} samples",
                self.0.len()
            )));
        }
        Ok(())
    }

    /// One line of comma-separated reals, shortest round-trip formatting.
    pub fn to_csv_line(&self) -> String {
        let fields: Vec<String> = self.0.iter().map(|v| format!("{v:?}")).collect();
        fields.join(",") + "\n"
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let values = line
            .trim()
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: 1,
                    message: format!("invalid library size {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_line(&text)
    }
}

/// How library sizes are estimated from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMethod {
    /// Column totals relative to their geometric mean.
    TotalCount,
    /// Column totals scaled by trimmed-mean-of-M-values factors.
    Tmm,
}

/// Fraction of log-fold-changes trimmed from each end.
pub const TMM_LOGRATIO_TRIM: f64 = 0.3;
/// Fraction of average log-expression values trimmed from each end.
pub const TMM_SUM_TRIM: f64 = 0.05;

/// Computed relative to the first entry so equal inputs give it exactly.
fn geometric_mean(v: &[f64]) -> f64 {
    let pivot = v[0];
    pivot * (v.iter().map(|x| (x / pivot).ln()).sum::<f64>() / v.len() as f64).exp()
}

/// Estimates library sizes, normalized to geometric mean 1.
pub fn compute_library_sizes(tensor: &CountTensor, method: NormMethod) -> Result<LibrarySizes> {
    let totals = tensor.sample_totals();
    if let Some(c) = totals.iter().position(|&t| t <= 0.0) {
        return Err(Error::ZeroSample(c));
    }
    let mut sizes = totals.clone();
    if method == NormMethod::Tmm {
        let factors = tmm_factors(tensor, &totals);
        for (s, f) in sizes.iter_mut().zip(&factors) {
            *s *= f;
        }
    }
    let gm = geometric_mean(&sizes);
    LibrarySizes::new(sizes.into_iter().map(|s| s / gm).collect())
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn tmm_factors(tensor: &CountTensor, totals: &[f64]) -> Vec<f64> {
    let rp = tensor.rp();
    let mean_depth = totals.iter().sum::<f64>() / rp as f64;
    let reference = (0..rp)
        .min_by(|&a, &b| {
            (totals[a] - mean_depth)
                .abs()
                .total_cmp(&(totals[b] - mean_depth).abs())
        })
        .unwrap_or(0);
    let column = |c: usize| -> Vec<f64> { (0..tensor.n()).map(|j| tensor.unit_counts(j)[c] as f64).collect() };
    let ref_col = column(reference);
    let mut factors: Vec<f64> = (0..rp)
        .map(|c| {
            if c == reference {
                1.0
            } else {
                tmm_factor(&column(c), totals[c], &ref_col, totals[reference])
            }
        })
        .collect();
    let gm = geometric_mean(&factors);
    for f in &mut factors {
        *f /= gm;
    }
    factors
}

/// Weighted trimmed mean of log-ratios of `obs` against `reference`.
fn tmm_factor(obs: &[f64], obs_total: f64, reference: &[f64], ref_total: f64) -> f64 {
    let mut m_values = Vec::new();
    let mut a_values = Vec::new();
    let mut variances = Vec::new();
    for (&y, &yr) in obs.iter().zip(reference) {
        if y <= 0.0 || yr <= 0.0 {
            continue;
        }
        let (q, qr) = (y / obs_total, yr / ref_total);
        m_values.push((q / qr).log2());
        a_values.push(0.5 * (q * qr).log2());
        variances.push((obs_total - y) / (obs_total * y) + (ref_total - yr) / (ref_total * yr));
    }
    let len = m_values.len();
    if len == 0 {
        return 1.0;
    }
    let n = len as f64;
    let lo_m = (n * TMM_LOGRATIO_TRIM).floor() + 1.0;
    let hi_m = n + 1.0 - lo_m;
    let lo_a = (n * TMM_SUM_TRIM).floor() + 1.0;
    let hi_a = n + 1.0 - lo_a;
    let m_ranks = average_ranks(&m_values);
    let a_ranks = average_ranks(&a_values);
    let (mut num, mut den) = (0.0, 0.0);
    for g in 0..len {
        let keep = m_ranks[g] >= lo_m && m_ranks[g] <= hi_m && a_ranks[g] >= lo_a && a_ranks[g] <= hi_a;
        if keep {
            // zero variance only arises when a sample holds a single gene
            let w = if variances[g] > 0.0 { 1.0 / variances[g] } else { 1.0 };
            num += w * m_values[g];
            den += w;
        }
    }
    if den > 0.0 {
        2f64.powf(num / den)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(r: usize, p: usize, rows: &[&[u64]]) -> CountTensor {
        CountTensor::from_counts(r, p, rows.concat()).unwrap()
    }

    #[test]
    fn reads_small_file() {
        let text = "unit_id,a,b\na,1,2\nb,0,0\nc,5,3\n";
        let t = read_counts(text.as_bytes(), 1, 2).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.unit_counts(0), &[1, 2]);
        assert_eq!(t.unit_counts(1), &[0, 0]);
        assert_eq!(t.unit_counts(2), &[5, 3]);
        assert_eq!(t.unit_ids(), &["a", "b", "c"]);
    }

    #[test]
    fn column_count_mismatch() {
        let text = "id,a,b,c,d,e\nx,1,2,3,4,5\n";
        assert!(matches!(read_counts(text.as_bytes(), 2, 3), Err(Error::Dimension(_))));
        let ragged = "id,a,b\nx,1,2\ny,1\n";
        assert!(matches!(read_counts(ragged.as_bytes(), 1, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_bad_counts() {
        let kind = |text: &str| match read_counts(text.as_bytes(), 1, 2) {
            Err(Error::InvalidCount { kind, .. }) => Some(kind),
            _ => None,
        };
        assert_eq!(kind("id,a,b\nx,1,-2\n"), Some(CountErrorKind::Negative));
        assert_eq!(kind("id,a,b\nx,1.5,2\n"), Some(CountErrorKind::Fractional));
        assert_eq!(kind("id,a,b\nx,1,abc\n"), Some(CountErrorKind::NonNumeric));
        assert_eq!(kind("id,a,b\nx,1,NaN\n"), Some(CountErrorKind::NonNumeric));
        let ok = read_counts("id,a,b\nx,3.0,2\n".as_bytes(), 1, 2).unwrap();
        assert_eq!(ok.unit_counts(0), &[3, 2]);
    }

    #[test]
    fn rejects_duplicate_units() {
        let text = "id,a\nx,1\nx,2\n";
        assert!(matches!(read_counts(text.as_bytes(), 1, 1), Err(Error::DuplicateUnit(id)) if id == "x"));
    }

    #[test]
    fn sample_names_split_into_labels() {
        let text = "gene,D:E,D:I,D:M,N:E,N:I,N:M\ng1,1,2,3,4,5,6\n";
        let t = read_counts(text.as_bytes(), 2, 3).unwrap();
        assert_eq!(t.occasion_ids(), &["D", "N"]);
        assert_eq!(t.variable_ids(), &["E", "I", "M"]);
        let plain = "gene,DE,DI,DM,NDE,NDI,NDM\ng1,1,2,3,4,5,6\n";
        let t = read_counts(plain.as_bytes(), 2, 3).unwrap();
        assert_eq!(t.occasion_ids(), &["o1", "o2"]);
        assert_eq!(t.sample_ids()[3], "NDE");
        assert_eq!(
            t.unit_matrix(0),
            DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.])
        );
    }

    #[test]
    fn vectorization_examples() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(vectorize_unit(&m), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(vectorize_unit(&DMatrix::from_element(1, 1, 7.0)), vec![7.0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 9.0, 8.0, 0.0]);
        assert_eq!(vectorize_unit(&m), vec![0.0, 9.0, 8.0, 0.0]);
        assert_eq!(devectorize(&[0.0, 9.0, 8.0, 0.0], 2, 2), m);
    }

    #[test]
    fn total_count_sizes() {
        let t = tensor(1, 2, &[&[5, 5], &[3, 3]]);
        let s = compute_library_sizes(&t, NormMethod::TotalCount).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0]);

        let t = tensor(1, 2, &[&[60, 100], &[40, 300]]);
        let s = compute_library_sizes(&t, NormMethod::TotalCount).unwrap();
        assert!((s.values()[0] - 0.5).abs() < 1e-12);
        assert!((s.values()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tmm_recovers_exact_scaling() {
        let base = [3u64, 10, 0, 7, 25, 1, 4, 90, 12, 6];
        let rows: Vec<Vec<u64>> = base.iter().map(|&c| vec![c, 3 * c]).collect();
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = tensor(1, 2, &refs);
        let s = compute_library_sizes(&t, NormMethod::Tmm).unwrap();
        assert!((s.values()[1] / s.values()[0] - 3.0).abs() < 1e-9);
        // direct computation: every M-value is zero, so sizes follow the totals
        let expected = [1.0 / 3f64.sqrt(), 3f64.sqrt()];
        for (a, b) in s.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tmm_downweights_a_composition_shift() {
        // sample 2 has one hugely up-regulated gene; TMM should ignore it
        let mut rows: Vec<Vec<u64>> = (1..=40).map(|g| vec![10 * g, 10 * g]).collect();
        rows.push(vec![10, 20_000]);
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = tensor(1, 2, &refs);
        let total = compute_library_sizes(&t, NormMethod::TotalCount).unwrap();
        let tmm = compute_library_sizes(&t, NormMethod::Tmm).unwrap();
        let ratio_total = total.values()[1] / total.values()[0];
        let ratio_tmm = tmm.values()[1] / tmm.values()[0];
        assert!(ratio_total > 2.0);
        assert!((ratio_tmm - ratio_total).abs() > 0.5);
    }

    #[test]
    fn all_zero_sample_column_fails() {
        let t = tensor(1, 2, &[&[1, 0], &[2, 0]]);
        assert!(matches!(
            compute_library_sizes(&t, NormMethod::Tmm),
            Err(Error::ZeroSample(1))
        ));
    }

    #[test]
    fn library_size_line_round_trip() {
        let s = LibrarySizes::new(vec![0.1, 2.0 / 3.0, 1e-300, 7.0]).unwrap();
        let line = s.to_csv_line();
        assert_eq!(LibrarySizes::from_csv_line(&line).unwrap(), s);
        assert!(LibrarySizes::new(vec![1.0, 0.0]).is_err());
        assert!(LibrarySizes::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
