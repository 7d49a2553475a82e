//! Repeated random train/test splits of a labeled dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_nblda, misclassification_rate, predict, ClassifierMethod, DispersionSource, FitOptions};
use crate::count_data::{bss_wss_select, split_dataset, LabeledDataset};
use crate::error::{NbldaError, Result};
use crate::normalization::estimate_size_factors;
use crate::rng::derive_seed;
use crate::simulation::mean_and_std_error;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOptions {
    pub fit: FitOptions,
    pub method: ClassifierMethod,
    pub test_count: usize,
    pub runs: usize,
    /// Keep this many BSS/WSS-ranked genes, chosen on each training set.
    pub top_genes: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub method: ClassifierMethod,
    pub runs: usize,
    pub test_count: usize,
    pub mean_rate: f64,
    pub std_error: f64,
    pub rates: Vec<f64>,
}

/// Mean misclassification rate over `runs` random splits.
///
/// Run `r` splits with a seed derived from stream `r` of `seed`. Gene
/// filtering, size factors and dispersions all come from the training part
/// of each split only. A per-gene dispersion source is indexed in the full
/// dataset's gene order.
pub fn evaluate_splits(data: &LabeledDataset, options: &EvaluationOptions) -> Result<EvaluationResult> {
    if options.runs == 0 {
        return Err(NbldaError::Validation("runs must be at least 1".into()));
    }
    if let DispersionSource::PerGene(phi) = &options.fit.dispersion {
        if phi.len() != data.n_genes() {
            return Err(NbldaError::Model(format!(
                "{} supplied dispersions for {} genes",
                phi.len(),
                data.n_genes()
            )));
        }
    }
    let rates = (0..options.runs)
        .into_par_iter()
        .map(|r| run_split(data, options, derive_seed(options.seed, r as u64)))
        .collect::<Result<Vec<f64>>>()?;
    let (mean_rate, std_error) = mean_and_std_error(&rates);
    Ok(EvaluationResult {
        method: options.method,
        runs: options.runs,
        test_count: options.test_count,
        mean_rate,
        std_error,
        rates,
    })
}

fn run_split(data: &LabeledDataset, options: &EvaluationOptions, seed: u64) -> Result<f64> {
    let split = split_dataset(data, options.test_count, seed)?;
    let (train, test, fit) = match options.top_genes {
        None => (split.train, split.test, options.fit.clone()),
        Some(top) => {
            let sf = estimate_size_factors(split.train.matrix(), options.fit.size_factor_method, options.fit.quantile)?;
            let keep = bss_wss_select(&split.train, &sf.values, top)?;
            let mut fit = options.fit.clone();
            if let DispersionSource::PerGene(phi) = &options.fit.dispersion {
                fit.dispersion = DispersionSource::PerGene(keep.iter().map(|&g| phi[g]).collect());
            }
            (split.train.subset_genes(&keep)?, split.test.subset_genes(&keep)?, fit)
        }
    };
    let model = fit_nblda(&train, &fit)?;
    let predictions = predict(&model, test.matrix(), options.method)?;
    Ok(misclassification_rate(&predictions, test.labels()))
}
