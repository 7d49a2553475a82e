//! Negative binomial and Poisson linear discriminant analysis.
//!
//! A fitted [`NbldaModel`] holds per-gene totals `lambda_g`, class
//! differences `d_kg`, dispersions `phi_g` and class priors. For a test
//! vector `x*` with size factor `s*` the NBLDA score of class `k` is
//!
//! ```text
//! sum_g x*_g [log d_kg - log(1 + s* lambda_g d_kg phi_g)]
//!   - sum_g log(1 + s* lambda_g d_kg phi_g) / phi_g + log pi_k
//! ```
//!
//! and the PLDA score, its `phi -> 0` limit, is
//!
//! ```text
//! sum_g x*_g log d_kg - sum_g s* lambda_g d_kg + log pi_k
//! ```
//!
//! Both are reported without the class-independent constant, which cancels
//! in the argmax and in the posteriors.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::count_data::{CountMatrix, LabeledDataset};
use crate::dispersion::{shrink_dispersions, DispersionEstimate};
use crate::error::{NbldaError, Result};
use crate::normalization::{estimate_size_factors, size_factor_for_test, SizeFactorMethod, SizeFactors, DEFAULT_QUANTILE};

/// Log of the NB probability of `x` with mean `mu` and dispersion `phi`
/// (variance `mu + mu^2 phi`). `phi = 0` gives the Poisson log-pmf.
pub fn nb_log_pmf(x: u64, mu: f64, phi: f64) -> f64 {
    debug_assert!(mu > 0.0 && phi >= 0.0);
    let xf = x as f64;
    if phi == 0.0 {
        return xf * mu.ln() - mu - ln_factorial(x);
    }
    let log1p_mu_phi = (mu * phi).ln_1p();
    // Gamma(x + 1/phi) / Gamma(1/phi) = phi^-x * prod_{j<x} (1 + j phi).
    // The product form avoids cancellation between two huge log-gammas when
    // phi is small; the log-gamma form is O(1) for large x.
    let rising = if x <= 64 || phi < 1e-4 {
        xf * mu.ln() + (0..x).map(|j| (j as f64 * phi).ln_1p()).sum::<f64>()
    } else {
        let r = phi.recip();
        ln_gamma(xf + r) - ln_gamma(r) + xf * (mu * phi).ln()
    };
    rising - ln_factorial(x) - xf * log1p_mu_phi - log1p_mu_phi / phi
}

/// Per-gene NBLDA score term for count `x`, baseline mean `mean = s* lambda_g`,
/// class difference `d` and dispersion `phi`. Zero dispersion uses the
/// Poisson limit.
#[inline]
pub fn nblda_gene_term(x: f64, mean: f64, d: f64, phi: f64) -> f64 {
    if phi == 0.0 {
        return plda_gene_term(x, mean, d);
    }
    let l = (mean * d * phi).ln_1p();
    x * (d.ln() - l) - l / phi
}

/// Per-gene PLDA score term.
#[inline]
pub fn plda_gene_term(x: f64, mean: f64, d: f64) -> f64 {
    x * d.ln() - mean * d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMethod {
    #[default]
    Nblda,
    Plda,
}

impl ClassifierMethod {
    pub const ALL: [ClassifierMethod; 2] = [ClassifierMethod::Nblda, ClassifierMethod::Plda];
}

impl fmt::Display for ClassifierMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierMethod::Nblda => "nblda",
            ClassifierMethod::Plda => "plda",
        })
    }
}

impl FromStr for ClassifierMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nblda" => Ok(ClassifierMethod::Nblda),
            "plda" => Ok(ClassifierMethod::Plda),
            other => Err(format!("unknown method '{other}' (expected nblda or plda)")),
        }
    }
}

/// Default cutoff on the average dispersion below which PLDA is preferred.
pub const DEFAULT_RECOMMEND_THRESHOLD: f64 = 0.1;

/// PLDA when the average dispersion is below `threshold`, NBLDA otherwise.
pub fn recommend_method(average_dispersion: f64, threshold: f64) -> ClassifierMethod {
    if average_dispersion < threshold {
        ClassifierMethod::Plda
    } else {
        ClassifierMethod::Nblda
    }
}

/// Where the per-gene dispersions of a fit come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DispersionSource {
    /// Moment estimates shrunk toward a common target.
    #[default]
    Estimate,
    /// One value for every gene.
    Common(f64),
    /// One value per gene, in training gene order.
    PerGene(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub size_factor_method: SizeFactorMethod,
    pub quantile: f64,
    pub dispersion: DispersionSource,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            size_factor_method: SizeFactorMethod::TotalCount,
            quantile: DEFAULT_QUANTILE,
            dispersion: DispersionSource::Estimate,
        }
    }
}

/// Fitted NBLDA parameters. PLDA scoring uses the same model and ignores
/// the dispersions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbldaModel {
    gene_ids: Vec<String>,
    lambda: Vec<f64>,
    /// `class_diff[k][g]`
    class_diff: Vec<Vec<f64>>,
    phi: Vec<f64>,
    priors: Vec<f64>,
    size_factors: SizeFactors,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dispersion: Option<DispersionEstimate>,
}

impl NbldaModel {
    /// Assembles a model from parameters. Priors are rescaled to sum to 1
    /// unless they already do to within 1e-12.
    pub fn new(
        gene_ids: Vec<String>,
        lambda: Vec<f64>,
        class_diff: Vec<Vec<f64>>,
        phi: Vec<f64>,
        priors: Vec<f64>,
        size_factors: SizeFactors,
    ) -> Result<Self> {
        let model = Self {
            gene_ids,
            lambda,
            class_diff,
            phi,
            priors,
            size_factors,
            dispersion: None,
        };
        model.validated()
    }

    fn validated(mut self) -> Result<Self> {
        let g = self.gene_ids.len();
        if g == 0 {
            return Err(NbldaError::Model("model has no genes".into()));
        }
        if self.lambda.len() != g || self.phi.len() != g {
            return Err(NbldaError::Model(format!(
                "{} genes but {} totals and {} dispersions",
                g,
                self.lambda.len(),
                self.phi.len()
            )));
        }
        if self.class_diff.is_empty() || self.class_diff.len() != self.priors.len() {
            return Err(NbldaError::Model(format!(
                "{} class difference rows but {} priors",
                self.class_diff.len(),
                self.priors.len()
            )));
        }
        for (k, row) in self.class_diff.iter().enumerate() {
            if row.len() != g {
                return Err(NbldaError::Model(format!("class {} has {} differences, expected {g}", k + 1, row.len())));
            }
            if let Some(d) = row.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                return Err(NbldaError::Model(format!("class {} has non-positive difference {d}", k + 1)));
            }
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(NbldaError::Model(format!("invalid gene total {l}")));
        }
        if let Some(p) = self.phi.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(NbldaError::Model(format!("invalid dispersion {p}")));
        }
        if let Some(p) = self.priors.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(NbldaError::Model(format!("prior {p} is not positive")));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            for p in &mut self.priors {
                *p /= total;
            }
        }
        Ok(self)
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Class differences of class `k` (zero-based), one per gene.
    pub fn class_diff(&self, k: usize) -> &[f64] {
        &self.class_diff[k]
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn size_factors(&self) -> &SizeFactors {
        &self.size_factors
    }

    /// Shrinkage details when the dispersions were estimated.
    pub fn dispersion(&self) -> Option<&DispersionEstimate> {
        self.dispersion.as_ref()
    }

    /// Same model with the dispersions replaced.
    pub fn with_phi(&self, phi: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.phi = phi;
        m.dispersion = None;
        m.validated()
    }

    /// Checks invariants after deserialization.
    pub(crate) fn revalidate(self) -> Result<Self> {
        self.validated()
    }

    /// Discriminant scores of a test vector under `method`.
    pub fn scores(&self, method: ClassifierMethod, x_star: &[u64], s_star: f64) -> Result<ScoreVector> {
        match method {
            ClassifierMethod::Nblda => nblda_scores(self, x_star, s_star),
            ClassifierMethod::Plda => plda_scores(self, x_star, s_star),
        }
    }
}

/// Fits the model on labeled training data.
pub fn fit_nblda(train: &LabeledDataset, options: &FitOptions) -> Result<NbldaModel> {
    train.ensure_all_classes_present()?;
    let matrix = train.matrix();
    let g_count = matrix.n_genes();
    let n = train.n_samples();
    let sf = estimate_size_factors(matrix, options.size_factor_method, options.quantile)?;

    let lambda: Vec<f64> = (0..g_count).map(|g| matrix.gene_total(g) as f64).collect();

    let k_count = train.n_classes();
    let mut class_sf = vec![0.0; k_count];
    for (&k, s) in train.labels().iter().zip(&sf.values) {
        class_sf[k] += s;
    }
    let mut class_diff = vec![vec![0.0; g_count]; k_count];
    for g in 0..g_count {
        let mut class_counts = vec![0u64; k_count];
        for (&x, &k) in matrix.gene_row(g).iter().zip(train.labels()) {
            class_counts[k] += x;
        }
        for k in 0..k_count {
            class_diff[k][g] = (class_counts[k] as f64 + 1.0) / (class_sf[k] * lambda[g] + 1.0);
        }
    }

    let priors: Vec<f64> = train.class_sizes().iter().map(|&c| c as f64 / n as f64).collect();

    let (phi, dispersion) = match &options.dispersion {
        DispersionSource::Estimate => {
            let est = shrink_dispersions(train, &sf.values)?;
            (est.shrunken.clone(), Some(est))
        }
        DispersionSource::Common(v) => (vec![*v; g_count], None),
        DispersionSource::PerGene(v) => {
            if v.len() != g_count {
                return Err(NbldaError::Model(format!(
                    "{} supplied dispersions for {g_count} genes",
                    v.len()
                )));
            }
            (v.clone(), None)
        }
    };

    let mut model = NbldaModel::new(matrix.gene_ids().to_vec(), lambda, class_diff, phi, priors, sf)?;
    model.dispersion = dispersion;
    Ok(model)
}

/// Per-class scores with posteriors and the predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub posteriors: Vec<f64>,
    /// Zero-based class with the highest score; ties go to the lowest index.
    pub predicted: usize,
}

impl ScoreVector {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut predicted = 0;
        for (k, s) in scores.iter().enumerate() {
            if *s > scores[predicted] {
                predicted = k;
            }
        }
        let max = scores[predicted];
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let posteriors = weights.iter().map(|w| w / total).collect();
        Self {
            scores,
            posteriors,
            predicted,
        }
    }
}

fn check_input(model: &NbldaModel, x_star: &[u64], s_star: f64) -> Result<()> {
    if x_star.len() != model.n_genes() {
        return Err(NbldaError::Validation(format!(
            "test vector has {} genes, model has {}",
            x_star.len(),
            model.n_genes()
        )));
    }
    if !(s_star > 0.0 && s_star.is_finite()) {
        return Err(NbldaError::Validation(format!("test size factor {s_star} is not positive")));
    }
    Ok(())
}

/// NBLDA discriminant scores.
pub fn nblda_scores(model: &NbldaModel, x_star: &[u64], s_star: f64) -> Result<ScoreVector> {
    check_input(model, x_star, s_star)?;
    let scores = (0..model.n_classes())
        .map(|k| {
            let d = &model.class_diff[k];
            let mut total = 0.0;
            for g in 0..x_star.len() {
                total += nblda_gene_term(x_star[g] as f64, s_star * model.lambda[g], d[g], model.phi[g]);
            }
            total + model.priors[k].ln()
        })
        .collect();
    Ok(ScoreVector::from_scores(scores))
}

/// PLDA discriminant scores.
pub fn plda_scores(model: &NbldaModel, x_star: &[u64], s_star: f64) -> Result<ScoreVector> {
    check_input(model, x_star, s_star)?;
    let scores = (0..model.n_classes())
        .map(|k| {
            let d = &model.class_diff[k];
            let mut total = 0.0;
            for g in 0..x_star.len() {
                total += plda_gene_term(x_star[g] as f64, s_star * model.lambda[g], d[g]);
            }
            total + model.priors[k].ln()
        })
        .collect();
    Ok(ScoreVector::from_scores(scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub size_factor: f64,
    pub scores: ScoreVector,
}

impl Prediction {
    pub fn class(&self) -> usize {
        self.scores.predicted
    }
}

/// Classifies every sample of `matrix`. Genes are matched by id and must be
/// exactly the model's gene set.
pub fn predict(model: &NbldaModel, matrix: &CountMatrix, method: ClassifierMethod) -> Result<Vec<Prediction>> {
    let aligned;
    let matrix = if matrix.gene_ids() == model.gene_ids() {
        matrix
    } else {
        aligned = matrix.align_genes(model.gene_ids())?;
        &aligned
    };
    (0..matrix.n_samples())
        .into_par_iter()
        .map(|i| {
            let x_star = matrix.sample_column(i);
            let s_star = size_factor_for_test(model.size_factors(), &x_star).map_err(|e| {
                NbldaError::Normalization(format!("sample '{}': {e}", matrix.sample_ids()[i]))
            })?;
            Ok(Prediction {
                sample_id: matrix.sample_ids()[i].clone(),
                size_factor: s_star,
                scores: model.scores(method, &x_star, s_star)?,
            })
        })
        .collect()
}

/// Fraction of samples whose predicted class differs from the label.
pub fn misclassification_rate(predictions: &[Prediction], labels: &[usize]) -> f64 {
    let wrong = predictions.iter().zip(labels).filter(|(p, &y)| p.class() != y).count();
    wrong as f64 / labels.len() as f64
}
