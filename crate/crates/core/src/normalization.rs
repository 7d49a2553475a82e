//! Size factors for sequencing-depth normalization.
//!
//! Three estimators are provided: total count, median of ratios to the
//! per-gene geometric mean, and an upper quantile of each sample's counts.
//! Each keeps the training statistics it needs so that a new sample can be
//! scaled against the training set without refitting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::count_data::CountMatrix;
use crate::error::{NbldaError, Result};

pub const DEFAULT_QUANTILE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeFactorMethod {
    #[default]
    TotalCount,
    MedianRatio,
    UpperQuartile,
}

impl fmt::Display for SizeFactorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeFactorMethod::TotalCount => "total",
            SizeFactorMethod::MedianRatio => "median-ratio",
            SizeFactorMethod::UpperQuartile => "upper-quartile",
        })
    }
}

impl FromStr for SizeFactorMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "total" | "total-count" => Ok(SizeFactorMethod::TotalCount),
            "median-ratio" | "deseq" => Ok(SizeFactorMethod::MedianRatio),
            "upper-quartile" | "uq" => Ok(SizeFactorMethod::UpperQuartile),
            other => Err(format!("unknown size factor method '{other}'")),
        }
    }
}

/// Training statistics needed to scale an unseen sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceStats {
    TotalCount {
        grand_total: f64,
    },
    /// Per-gene geometric means; `None` for genes with a zero in some
    /// training sample.
    MedianRatio {
        geometric_means: Vec<Option<f64>>,
    },
    UpperQuartile {
        quantile: f64,
        quantile_sum: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeFactors {
    pub method: SizeFactorMethod,
    pub values: Vec<f64>,
    pub reference: ReferenceStats,
}

impl SizeFactors {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Estimates training size factors with the chosen method. `quantile` is
/// only used by the upper-quartile method.
pub fn estimate_size_factors(matrix: &CountMatrix, method: SizeFactorMethod, quantile: f64) -> Result<SizeFactors> {
    match method {
        SizeFactorMethod::TotalCount => size_factors_total_count(matrix),
        SizeFactorMethod::MedianRatio => size_factors_median_ratio(matrix),
        SizeFactorMethod::UpperQuartile => size_factors_upper_quartile(matrix, quantile),
    }
}

/// `s_i = sum_g X_ig / sum_i sum_g X_ig`.
pub fn size_factors_total_count(matrix: &CountMatrix) -> Result<SizeFactors> {
    let totals: Vec<f64> = (0..matrix.n_samples()).map(|i| matrix.sample_total(i) as f64).collect();
    if let Some(i) = totals.iter().position(|&t| t == 0.0) {
        return Err(NbldaError::Normalization(format!(
            "sample '{}' has no reads",
            matrix.sample_ids()[i]
        )));
    }
    let grand_total: f64 = totals.iter().sum();
    Ok(SizeFactors {
        method: SizeFactorMethod::TotalCount,
        values: totals.iter().map(|t| t / grand_total).collect(),
        reference: ReferenceStats::TotalCount { grand_total },
    })
}

/// Median over genes of `X_ig` divided by the gene's geometric mean across
/// samples. Only genes with a positive count in every sample take part.
pub fn size_factors_median_ratio(matrix: &CountMatrix) -> Result<SizeFactors> {
    let n = matrix.n_samples() as f64;
    let geometric_means: Vec<Option<f64>> = (0..matrix.n_genes())
        .map(|g| {
            let row = matrix.gene_row(g);
            if row.iter().all(|&x| x > 0) {
                let mean_log = row.iter().map(|&x| (x as f64).ln()).sum::<f64>() / n;
                Some(mean_log.exp())
            } else {
                None
            }
        })
        .collect();
    if geometric_means.iter().all(Option::is_none) {
        return Err(NbldaError::Normalization(
            "median-ratio size factors need a gene with positive counts in every sample".into(),
        ));
    }
    let mut values = Vec::with_capacity(matrix.n_samples());
    for i in 0..matrix.n_samples() {
        let s = median_ratio(&matrix.sample_column(i), &geometric_means);
        if s.is_nan() || s <= 0.0 {
            return Err(NbldaError::Normalization(format!(
                "median-ratio size factor of sample '{}' is zero",
                matrix.sample_ids()[i]
            )));
        }
        values.push(s);
    }
    Ok(SizeFactors {
        method: SizeFactorMethod::MedianRatio,
        values,
        reference: ReferenceStats::MedianRatio { geometric_means },
    })
}

fn median_ratio(column: &[u64], geometric_means: &[Option<f64>]) -> f64 {
    let mut ratios: Vec<f64> = column
        .iter()
        .zip(geometric_means)
        .filter_map(|(&x, gm)| gm.map(|gm| x as f64 / gm))
        .collect();
    median(&mut ratios)
}

/// `s_i = q_i / sum_i q_i`, with `q_i` the `quantile` of sample `i`'s
/// counts under midpoint interpolation.
pub fn size_factors_upper_quartile(matrix: &CountMatrix, quantile: f64) -> Result<SizeFactors> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(NbldaError::Normalization(format!(
            "quantile must lie in (0, 1), got {quantile}"
        )));
    }
    let mut qs = Vec::with_capacity(matrix.n_samples());
    for i in 0..matrix.n_samples() {
        let mut col: Vec<f64> = matrix.sample_column(i).into_iter().map(|x| x as f64).collect();
        let q = quantile_midpoint(&mut col, quantile);
        if q.is_nan() || q <= 0.0 {
            return Err(NbldaError::Normalization(format!(
                "upper quantile of sample '{}' is zero",
                matrix.sample_ids()[i]
            )));
        }
        qs.push(q);
    }
    let quantile_sum: f64 = qs.iter().sum();
    Ok(SizeFactors {
        method: SizeFactorMethod::UpperQuartile,
        values: qs.iter().map(|q| q / quantile_sum).collect(),
        reference: ReferenceStats::UpperQuartile { quantile, quantile_sum },
    })
}

/// Size factor of an unseen sample, using only the stored training
/// statistics.
pub fn size_factor_for_test(sf: &SizeFactors, x_star: &[u64]) -> Result<f64> {
    let s = match &sf.reference {
        ReferenceStats::TotalCount { grand_total } => x_star.iter().sum::<u64>() as f64 / grand_total,
        ReferenceStats::MedianRatio { geometric_means } => {
            if x_star.len() != geometric_means.len() {
                return Err(length_mismatch(x_star.len(), geometric_means.len()));
            }
            median_ratio(x_star, geometric_means)
        }
        ReferenceStats::UpperQuartile { quantile, quantile_sum } => {
            let mut col: Vec<f64> = x_star.iter().map(|&x| x as f64).collect();
            quantile_midpoint(&mut col, *quantile) / quantile_sum
        }
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(NbldaError::Normalization(format!(
            "test sample size factor is {s}; it must be positive ({} method)",
            sf.method
        )));
    }
    Ok(s)
}

fn length_mismatch(got: usize, want: usize) -> NbldaError {
    NbldaError::Validation(format!("test sample has {got} genes, training had {want}"))
}

/// Median; the mean of the two middle values for even lengths. Reorders
/// `values`. Returns NaN when empty.
pub fn median(values: &mut [f64]) -> f64 {
    quantile_midpoint(values, 0.5)
}

/// Quantile at probability `p` with midpoint interpolation: with sorted
/// values and `h = (len - 1) * p`, the value at `h` when `h` is whole and
/// otherwise the mean of the neighbours at `floor(h)` and `ceil(h)`.
/// Reorders `values`. Returns NaN when empty.
pub fn quantile_midpoint(values: &mut [f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        0.5 * (values[lo] + values[hi])
    }
}
