//! Count matrices, class labels, train/test splitting and the BSS/WSS gene
//! filter.
//!
//! Matrices are always held genes-as-rows: `counts[g * n_samples + i]` is the
//! number of reads mapped to gene `g` in sample `i`. Class labels are stored
//! zero-based; files and reports use one-based class indices.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{NbldaError, Result};
use crate::rng::stream_rng;

/// Orientation of a count table on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Layout {
    #[default]
    GenesAsRows,
    SamplesAsRows,
}

/// Field separator of a delimited table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    pub fn as_byte(self) -> u8 {
        match self {
            Delimiter::Tab => b'\t',
            Delimiter::Comma => b',',
        }
    }

    /// Guess from a file extension: `.csv` means comma, anything else tab.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Delimiter::Comma,
            _ => Delimiter::Tab,
        }
    }
}

/// G x n matrix of nonnegative read counts with gene and sample identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    counts: Vec<u64>,
}

impl CountMatrix {
    /// Builds a matrix from genes-as-rows data. `rows[g][i]` is gene `g`,
    /// sample `i`.
    pub fn from_rows(
        gene_ids: Vec<String>,
        sample_ids: Vec<String>,
        rows: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if rows.len() != gene_ids.len() {
            return Err(NbldaError::Format(format!(
                "{} gene ids but {} rows",
                gene_ids.len(),
                rows.len()
            )));
        }
        let n = sample_ids.len();
        let mut counts = Vec::with_capacity(gene_ids.len() * n);
        for (g, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(NbldaError::Format(format!(
                    "row for gene '{}' has {} values, expected {}",
                    gene_ids[g],
                    row.len(),
                    n
                )));
            }
            counts.extend(row);
        }
        Self::from_flat(gene_ids, sample_ids, counts)
    }

    /// Builds a matrix from a row-major genes-as-rows buffer.
    pub fn from_flat(gene_ids: Vec<String>, sample_ids: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if gene_ids.is_empty() {
            return Err(NbldaError::Validation("matrix has no genes".into()));
        }
        if sample_ids.is_empty() {
            return Err(NbldaError::Validation("matrix has no samples".into()));
        }
        if counts.len() != gene_ids.len() * sample_ids.len() {
            return Err(NbldaError::Format(format!(
                "expected {} cells, found {}",
                gene_ids.len() * sample_ids.len(),
                counts.len()
            )));
        }
        ensure_unique(&gene_ids, "gene")?;
        ensure_unique(&sample_ids, "sample")?;
        Ok(Self {
            gene_ids,
            sample_ids,
            counts,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    #[inline]
    pub fn get(&self, gene: usize, sample: usize) -> u64 {
        self.counts[gene * self.sample_ids.len() + sample]
    }

    /// Counts of one gene across all samples.
    pub fn gene_row(&self, gene: usize) -> &[u64] {
        let n = self.sample_ids.len();
        &self.counts[gene * n..(gene + 1) * n]
    }

    /// Counts of one sample across all genes.
    pub fn sample_column(&self, sample: usize) -> Vec<u64> {
        (0..self.n_genes()).map(|g| self.get(g, sample)).collect()
    }

    pub fn sample_total(&self, sample: usize) -> u64 {
        (0..self.n_genes()).map(|g| self.get(g, sample)).sum()
    }

    pub fn gene_total(&self, gene: usize) -> u64 {
        self.gene_row(gene).iter().sum()
    }

    pub fn subset_samples(&self, indices: &[usize]) -> Result<Self> {
        let sample_ids = indices.iter().map(|&i| self.sample_ids[i].clone()).collect();
        let mut counts = Vec::with_capacity(self.n_genes() * indices.len());
        for g in 0..self.n_genes() {
            let row = self.gene_row(g);
            counts.extend(indices.iter().map(|&i| row[i]));
        }
        Self::from_flat(self.gene_ids.clone(), sample_ids, counts)
    }

    pub fn subset_genes(&self, indices: &[usize]) -> Result<Self> {
        let gene_ids = indices.iter().map(|&g| self.gene_ids[g].clone()).collect();
        let mut counts = Vec::with_capacity(indices.len() * self.n_samples());
        for &g in indices {
            counts.extend_from_slice(self.gene_row(g));
        }
        Self::from_flat(gene_ids, self.sample_ids.clone(), counts)
    }

    /// Reorders genes to follow `gene_ids`. The id sets must be identical.
    pub fn align_genes(&self, gene_ids: &[String]) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = self
            .gene_ids
            .iter()
            .enumerate()
            .map(|(g, id)| (id.as_str(), g))
            .collect();
        let missing: Vec<&str> = gene_ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .map(String::as_str)
            .collect();
        let wanted: HashSet<&str> = gene_ids.iter().map(String::as_str).collect();
        let extra: Vec<&str> = self
            .gene_ids
            .iter()
            .filter(|id| !wanted.contains(id.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(NbldaError::GeneMismatch(format!(
                "missing from data: [{}]; not in model: [{}]",
                preview(&missing),
                preview(&extra)
            )));
        }
        let order: Vec<usize> = gene_ids.iter().map(|id| index[id.as_str()]).collect();
        self.subset_genes(&order)
    }

    /// Writes the matrix genes-as-rows with a `gene_id` header cell.
    pub fn write<W: Write>(&self, writer: W, delimiter: Delimiter) -> Result<()> {
        let mut out = std::io::BufWriter::new(writer);
        let sep = delimiter.as_byte() as char;
        write!(out, "gene_id")?;
        for s in &self.sample_ids {
            write!(out, "{sep}{s}")?;
        }
        writeln!(out)?;
        for (g, id) in self.gene_ids.iter().enumerate() {
            write!(out, "{id}")?;
            for c in self.gene_row(g) {
                write!(out, "{sep}{c}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn preview(ids: &[&str]) -> String {
    const MAX: usize = 10;
    let mut s = ids.iter().take(MAX).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > MAX {
        s.push_str(&format!(", ... ({} total)", ids.len()));
    }
    s
}

fn ensure_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(NbldaError::Validation(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

fn parse_count(cell: &str, row: usize, column: usize) -> Result<u64> {
    let cell = cell.trim();
    match cell.parse::<i128>() {
        Ok(v) if v < 0 => Err(NbldaError::Validation(format!(
            "negative count {v} at row {row}, column {column}"
        ))),
        Ok(v) => u64::try_from(v).map_err(|_| NbldaError::Parse {
            row,
            column,
            message: format!("count '{cell}' is too large"),
        }),
        Err(_) => Err(NbldaError::Parse {
            row,
            column,
            message: format!("'{cell}' is not a nonnegative integer"),
        }),
    }
}

/// Reads a delimited count table with one header row and one id column.
///
/// Row and column numbers in errors are one-based positions in the file,
/// counting the header row and the id column.
pub fn load_counts<R: Read>(source: R, layout: Layout, delimiter: Delimiter) -> Result<CountMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter.as_byte())
        .from_reader(source);

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(NbldaError::Format("empty count table".into())),
    };
    let width = header.len();
    if width < 2 {
        return Err(NbldaError::Format("header must have an id column and at least one data column".into()));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();

    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for (r, record) in records.enumerate() {
        let record = record.map_err(csv_error)?;
        let file_row = r + 2;
        if record.len() != width {
            return Err(NbldaError::Format(format!(
                "row {file_row} has {} fields, header has {width}",
                record.len()
            )));
        }
        row_ids.push(record[0].trim().to_string());
        for (c, cell) in record.iter().enumerate().skip(1) {
            cells.push(parse_count(cell, file_row, c + 1)?);
        }
    }
    if row_ids.is_empty() {
        return Err(NbldaError::Format("count table has no data rows".into()));
    }

    match layout {
        Layout::GenesAsRows => CountMatrix::from_flat(row_ids, col_ids, cells),
        Layout::SamplesAsRows => {
            let n_rows = row_ids.len();
            let n_cols = col_ids.len();
            let mut transposed = vec![0u64; cells.len()];
            for r in 0..n_rows {
                for c in 0..n_cols {
                    transposed[c * n_rows + r] = cells[r * n_cols + c];
                }
            }
            CountMatrix::from_flat(col_ids, row_ids, transposed)
        }
    }
}

pub fn load_counts_path(path: &Path, layout: Layout, delimiter: Delimiter) -> Result<CountMatrix> {
    let file = std::fs::File::open(path)?;
    load_counts(std::io::BufReader::new(file), layout, delimiter)
}

fn csv_error(e: csv::Error) -> NbldaError {
    NbldaError::Format(e.to_string())
}

/// Reads a two-column `sample_id, class_index` table. The header row is
/// optional; class indices are one-based in the file and returned zero-based.
/// Tab or comma separation is detected per line.
pub fn load_labels<R: Read>(mut source: R) -> Result<Vec<(String, usize)>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split(',').collect()
        };
        if fields.len() != 2 {
            return Err(NbldaError::Format(format!(
                "labels line {} has {} fields, expected 2",
                line_no + 1,
                fields.len()
            )));
        }
        let class_field = fields[1].trim();
        match class_field.parse::<usize>() {
            Ok(0) => {
                return Err(NbldaError::Validation(format!(
                    "labels line {}: class indices start at 1",
                    line_no + 1
                )))
            }
            Ok(k) => out.push((fields[0].trim().to_string(), k - 1)),
            Err(_) if out.is_empty() && line_no == first_nonblank(&text) => continue,
            Err(_) => {
                return Err(NbldaError::Parse {
                    row: line_no + 1,
                    column: 2,
                    message: format!("'{class_field}' is not a class index"),
                })
            }
        }
    }
    Ok(out)
}

fn first_nonblank(text: &str) -> usize {
    text.lines().position(|l| !l.trim().is_empty()).unwrap_or(0)
}

pub fn load_labels_path(path: &Path) -> Result<Vec<(String, usize)>> {
    load_labels(std::fs::File::open(path)?)
}

/// A count matrix with a class label for every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDataset {
    matrix: CountMatrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    /// `labels` are zero-based and must be `< n_classes`.
    pub fn new(matrix: CountMatrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != matrix.n_samples() {
            return Err(NbldaError::Validation(format!(
                "{} labels for {} samples",
                labels.len(),
                matrix.n_samples()
            )));
        }
        if n_classes == 0 {
            return Err(NbldaError::Validation("class count must be at least 1".into()));
        }
        if let Some((i, &k)) = labels.iter().enumerate().find(|(_, &k)| k >= n_classes) {
            return Err(NbldaError::Validation(format!(
                "sample '{}' has class {} but only {} classes exist",
                matrix.sample_ids()[i],
                k + 1,
                n_classes
            )));
        }
        Ok(Self {
            matrix,
            labels,
            n_classes,
        })
    }

    /// Attaches labels given as `(sample_id, class)` pairs in any order.
    /// The class count is the largest class index seen.
    pub fn from_sample_labels(matrix: CountMatrix, pairs: &[(String, usize)]) -> Result<Self> {
        let lookup: std::collections::HashMap<&str, usize> =
            pairs.iter().map(|(s, k)| (s.as_str(), *k)).collect();
        let mut labels = Vec::with_capacity(matrix.n_samples());
        let mut missing = Vec::new();
        for id in matrix.sample_ids() {
            match lookup.get(id.as_str()) {
                Some(&k) => labels.push(k),
                None => missing.push(id.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(NbldaError::Validation(format!(
                "no label for samples [{}]",
                preview(&missing)
            )));
        }
        let n_classes = labels.iter().copied().max().map_or(1, |k| k + 1);
        Self::new(matrix, labels, n_classes)
    }

    pub fn matrix(&self) -> &CountMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.n_samples()
    }

    pub fn n_genes(&self) -> usize {
        self.matrix.n_genes()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes];
        for &k in &self.labels {
            sizes[k] += 1;
        }
        sizes
    }

    /// Errors unless every class has at least one sample.
    pub fn ensure_all_classes_present(&self) -> Result<()> {
        let sizes = self.class_sizes();
        match sizes.iter().position(|&s| s == 0) {
            Some(k) => Err(NbldaError::Validation(format!("class {} has no samples", k + 1))),
            None => Ok(()),
        }
    }

    pub fn subset_samples(&self, indices: &[usize]) -> Result<Self> {
        let matrix = self.matrix.subset_samples(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(matrix, labels, self.n_classes)
    }

    pub fn subset_genes(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.matrix.subset_genes(indices)?, self.labels.clone(), self.n_classes)
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Maximum number of seed-derived draws tried before a split is declared
/// infeasible.
pub const MAX_SPLIT_ATTEMPTS: u64 = 100;

/// Random train/test split holding out `test_count` samples.
///
/// Attempt `a` uses stream `a` of `seed`; the first draw that leaves every
/// class with a training sample wins.
pub fn split_dataset(data: &LabeledDataset, test_count: usize, seed: u64) -> Result<SplitResult> {
    let n = data.n_samples();
    if test_count == 0 || test_count >= n {
        return Err(NbldaError::Split(format!(
            "test count must be in 1..{n}, got {test_count}"
        )));
    }
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut rng = stream_rng(seed, attempt);
        let mut order: Vec<usize> = (0..n).collect();
        let (chosen, rest) = order.partial_shuffle(&mut rng, test_count);
        let mut test_indices = chosen.to_vec();
        let mut train_indices = rest.to_vec();
        test_indices.sort_unstable();
        train_indices.sort_unstable();

        let mut seen = vec![false; data.n_classes()];
        for &i in &train_indices {
            seen[data.labels()[i]] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(SplitResult {
                train: data.subset_samples(&train_indices)?,
                test: data.subset_samples(&test_indices)?,
                train_indices,
                test_indices,
            });
        }
    }
    Err(NbldaError::Split(format!(
        "no split with {test_count} test samples kept every class in training after {MAX_SPLIT_ATTEMPTS} draws"
    )))
}

/// Between-group over within-group sum of squares for every gene, computed
/// on `x_ig / s_i`.
///
/// A gene with no between-group variation scores 0. Otherwise a gene with no
/// within-group variation scores `+inf`.
pub fn bss_wss_ratios(data: &LabeledDataset, size_factors: &[f64]) -> Result<Vec<f64>> {
    let n = data.n_samples();
    if size_factors.len() != n {
        return Err(NbldaError::Validation(format!(
            "{} size factors for {n} samples",
            size_factors.len()
        )));
    }
    if let Some(s) = size_factors.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(NbldaError::Validation(format!("size factor {s} is not positive")));
    }
    let k_count = data.n_classes();
    let labels = data.labels();
    let sizes = data.class_sizes();

    let ratios = (0..data.n_genes())
        .map(|g| {
            let row = data.matrix().gene_row(g);
            let z: Vec<f64> = row.iter().zip(size_factors).map(|(&x, &s)| x as f64 / s).collect();
            let grand = z.iter().sum::<f64>() / n as f64;
            let mut class_sum = vec![0.0; k_count];
            for (zi, &k) in z.iter().zip(labels) {
                class_sum[k] += zi;
            }
            let class_mean: Vec<f64> = class_sum
                .iter()
                .zip(&sizes)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                .collect();
            let mut bss = 0.0;
            let mut wss = 0.0;
            for (zi, &k) in z.iter().zip(labels) {
                bss += (class_mean[k] - grand).powi(2);
                wss += (zi - class_mean[k]).powi(2);
            }
            if bss == 0.0 {
                0.0
            } else if wss == 0.0 {
                f64::INFINITY
            } else {
                bss / wss
            }
        })
        .collect();
    Ok(ratios)
}

/// Keeps the `top_g` genes with the largest BSS/WSS ratio, in their original
/// order. Ties rank by original gene order.
pub fn bss_wss_filter(data: &LabeledDataset, size_factors: &[f64], top_g: usize) -> Result<LabeledDataset> {
    data.subset_genes(&bss_wss_select(data, size_factors, top_g)?)
}

/// Indices (ascending) of the genes [`bss_wss_filter`] keeps.
pub fn bss_wss_select(data: &LabeledDataset, size_factors: &[f64], top_g: usize) -> Result<Vec<usize>> {
    if top_g == 0 || top_g > data.n_genes() {
        return Err(NbldaError::Validation(format!(
            "top_g must be in 1..={}, got {top_g}",
            data.n_genes()
        )));
    }
    if data.n_classes() < 2 {
        return Err(NbldaError::Validation("BSS/WSS filtering needs at least two classes".into()));
    }
    let ratios = bss_wss_ratios(data, size_factors)?;
    let mut keep = rank_by_ratio(&ratios);
    keep.truncate(top_g);
    keep.sort_unstable();
    Ok(keep)
}

/// Gene indices ordered by decreasing ratio, ties by index.
pub fn rank_by_ratio(ratios: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn toy() -> LabeledDataset {
        let m = CountMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            ids("s", 4),
            vec![vec![10, 12, 30, 34], vec![5, 7, 6, 6], vec![1, 3, 2, 6]],
        )
        .unwrap();
        LabeledDataset::new(m, vec![0, 0, 1, 1], 2).unwrap()
    }

    #[test]
    fn loads_two_by_two() {
        let text = "id\ts1\ts2\ng1\t1\t2\ng2\t3\t4\n";
        let m = load_counts(text.as_bytes(), Layout::GenesAsRows, Delimiter::Tab).unwrap();
        assert_eq!(m.gene_ids(), ["g1", "g2"]);
        assert_eq!(m.sample_ids(), ["s1", "s2"]);
        assert_eq!(m.gene_row(0), [1, 2]);
        assert_eq!(m.gene_row(1), [3, 4]);
    }

    #[test]
    fn fractional_cell_is_a_parse_error_with_position() {
        let text = "id,s1,s2\ng1,1,3.5\n";
        let err = load_counts(text.as_bytes(), Layout::GenesAsRows, Delimiter::Comma).unwrap_err();
        match err {
            NbldaError::Parse { row, column, .. } => assert_eq!((row, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_cell_is_a_validation_error() {
        let text = "id\ts1\ng1\t-4\n";
        let err = load_counts(text.as_bytes(), Layout::GenesAsRows, Delimiter::Tab).unwrap_err();
        assert!(matches!(err, NbldaError::Validation(_)), "{err}");
    }

    #[test]
    fn ragged_rows_are_a_format_error() {
        let text = "id\ts1\ts2\ng1\t1\ng2\t3\t4\n";
        let err = load_counts(text.as_bytes(), Layout::GenesAsRows, Delimiter::Tab).unwrap_err();
        assert!(matches!(err, NbldaError::Format(_)), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "id\ts1\ts1\ng1\t1\t2\n";
        assert!(load_counts(text.as_bytes(), Layout::GenesAsRows, Delimiter::Tab).is_err());
    }

    #[test]
    fn samples_as_rows_is_the_transpose() {
        let genes = "id\ts1\ts2\ts3\ng1\t1\t2\t3\ng2\t4\t5\t6\n";
        let samples = "id\tg1\tg2\ns1\t1\t4\ns2\t2\t5\ns3\t3\t6\n";
        let a = load_counts(genes.as_bytes(), Layout::GenesAsRows, Delimiter::Tab).unwrap();
        let b = load_counts(samples.as_bytes(), Layout::SamplesAsRows, Delimiter::Tab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_with_and_without_header() {
        let with = load_labels("sample_id\tclass\ns1\t1\ns2\t2\n".as_bytes()).unwrap();
        let without = load_labels("s1,1\ns2,2\n".as_bytes()).unwrap();
        assert_eq!(with, vec![("s1".to_string(), 0), ("s2".to_string(), 1)]);
        assert_eq!(with, without);
        assert!(load_labels("s1\t1\ns2\tx\n".as_bytes()).is_err());
        assert!(load_labels("s1\t0\n".as_bytes()).is_err());
    }

    #[test]
    fn labels_align_by_sample_id() {
        let m = toy().matrix().clone();
        let pairs = vec![
            ("s4".to_string(), 1),
            ("s1".to_string(), 0),
            ("s3".to_string(), 1),
            ("s2".to_string(), 0),
        ];
        let d = LabeledDataset::from_sample_labels(m.clone(), &pairs).unwrap();
        assert_eq!(d.labels(), [0, 0, 1, 1]);
        assert!(LabeledDataset::from_sample_labels(m, &pairs[..3]).is_err());
    }

    fn labeled(n: usize, k: usize) -> LabeledDataset {
        let m = CountMatrix::from_flat(vec!["g".into()], ids("s", n), (0..n as u64).collect()).unwrap();
        LabeledDataset::new(m, (0..n).map(|i| i % k).collect(), k).unwrap()
    }

    #[test]
    fn split_is_deterministic() {
        let d = labeled(10, 2);
        let a = split_dataset(&d, 2, 42).unwrap();
        let b = split_dataset(&d, 2, 42).unwrap();
        assert_eq!(a.test_indices, b.test_indices);
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.test_indices.len(), 2);
    }

    #[test]
    fn split_partitions_samples() {
        let d = labeled(58, 2);
        let s = split_dataset(&d, 6, 1).unwrap();
        assert_eq!(s.train.n_samples(), 52);
        assert_eq!(s.test.n_samples(), 6);
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..58).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_full_holdout() {
        let d = labeled(10, 2);
        assert!(split_dataset(&d, 10, 0).is_err());
        assert!(split_dataset(&d, 0, 0).is_err());
    }

    #[test]
    fn split_keeps_singleton_class_in_training() {
        // Class 2 has a single sample; it must never be held out.
        let m = CountMatrix::from_flat(vec!["g".into()], ids("s", 6), vec![1; 6]).unwrap();
        let d = LabeledDataset::new(m, vec![0, 0, 0, 0, 0, 1], 2).unwrap();
        for seed in 0..20 {
            let s = split_dataset(&d, 3, seed).unwrap();
            assert!(s.train_indices.contains(&5));
        }
    }

    #[test]
    fn split_infeasible_errors() {
        // Class 2 is empty, so no split can populate it.
        let m = CountMatrix::from_flat(vec!["g".into()], ids("s", 4), vec![1; 4]).unwrap();
        let d = LabeledDataset::new(m, vec![0; 4], 2).unwrap();
        assert!(matches!(split_dataset(&d, 1, 0), Err(NbldaError::Split(_))));
    }

    #[test]
    fn bss_wss_matches_hand_computation() {
        // a: class means 11, 32, grand 21.5 -> BSS 441, WSS 10
        // b: class means equal -> BSS 0
        // c: class means 2, 4, grand 3 -> BSS 4, WSS 10
        let r = bss_wss_ratios(&toy(), &[1.0; 4]).unwrap();
        assert!((r[0] - 44.1).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        assert!((r[2] - 0.4).abs() < 1e-12);
        assert_eq!(rank_by_ratio(&r), vec![0, 2, 1]);

        let top = bss_wss_filter(&toy(), &[1.0; 4], 1).unwrap();
        assert_eq!(top.matrix().gene_ids(), ["a"]);
    }

    #[test]
    fn bss_wss_full_selection_is_identity() {
        let d = toy();
        assert_eq!(bss_wss_filter(&d, &[0.5, 1.0, 1.5, 2.0], 3).unwrap(), d);
    }

    #[test]
    fn zero_within_group_variation_ranks_first() {
        let m = CountMatrix::from_rows(
            vec!["noisy".into(), "clean".into(), "empty".into()],
            ids("s", 4),
            vec![vec![1, 9, 20, 40], vec![5, 5, 7, 7], vec![0, 0, 0, 0]],
        )
        .unwrap();
        let d = LabeledDataset::new(m, vec![0, 0, 1, 1], 2).unwrap();
        let r = bss_wss_ratios(&d, &[1.0; 4]).unwrap();
        assert_eq!(r[1], f64::INFINITY);
        assert_eq!(r[2], 0.0);
        assert_eq!(rank_by_ratio(&r), vec![1, 0, 2]);
    }

    #[test]
    fn bss_wss_errors() {
        let d = toy();
        assert!(bss_wss_filter(&d, &[1.0; 4], 4).is_err());
        assert!(bss_wss_filter(&d, &[1.0, 0.0, 1.0, 1.0], 2).is_err());
        assert!(bss_wss_filter(&d, &[1.0; 3], 2).is_err());
    }
}
