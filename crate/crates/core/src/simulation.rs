//! Synthetic NB count data, Monte Carlo misclassification studies and the
//! score-versus-dispersion curve.
//!
//! A scenario draws, for every replicate, a fresh world: gene totals
//! `lambda_g ~ Exp(0.04)`, size factors `s_i ~ U[0.2, 2.2]`, log class
//! differences `log d_kg ~ N(0, sigma^2)` on the differentially expressed
//! genes (the first `ceil(G * de_proportion)`), and counts
//! `X_ig ~ NB(s_i lambda_g d_kg, phi)`. Training and test sets are drawn
//! independently with `n` samples each.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Gamma, Normal, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fit_nblda, misclassification_rate, nblda_gene_term, plda_gene_term, predict, ClassifierMethod, FitOptions,
};
use crate::count_data::{CountMatrix, LabeledDataset};
use crate::error::{NbldaError, Result};
use crate::rng::{stream_rng, StreamRng};

/// Rate of the exponential distribution of gene totals.
pub const LAMBDA_RATE: f64 = 0.04;
/// Smallest gene total used when drawing counts.
pub const LAMBDA_FLOOR: f64 = 1e-6;
/// Range of simulated size factors.
pub const SIZE_FACTOR_RANGE: (f64, f64) = (0.2, 2.2);
/// Replicates run when the caller does not say otherwise.
pub const DEFAULT_REPLICATES: usize = 200;

/// One draw from NB with mean `mean` and dispersion `phi`
/// (variance `mean + mean^2 phi`), as a gamma-Poisson mixture.
/// `phi = 0` draws from Poisson(`mean`).
pub fn sample_nb<R: Rng + ?Sized>(mean: f64, phi: f64, rng: &mut R) -> u64 {
    debug_assert!(mean > 0.0 && phi >= 0.0);
    let rate = if phi == 0.0 {
        mean
    } else {
        // shape 1/phi, scale mean*phi: E = mean, Var = mean^2 phi
        Gamma::new(phi.recip(), mean * phi)
            .expect("gamma parameters are positive")
            .sample(rng)
    };
    sample_poisson(rate, rng)
}

fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate.is_nan() || rate <= 0.0 {
        return 0;
    }
    let rate = rate.min(Poisson::<f64>::MAX_LAMBDA);
    Poisson::new(rate).expect("rate is positive and bounded").sample(rng) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub genes: usize,
    /// Samples in each of the training and test sets.
    pub samples: usize,
    pub classes: usize,
    pub de_proportion: f64,
    pub sigma: f64,
    pub phi: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            genes: 100,
            samples: 8,
            classes: 2,
            de_proportion: 0.8,
            sigma: 5.0,
            phi: 20.0,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NbldaError::Validation(m));
        if self.genes == 0 || self.samples == 0 {
            return bad("genes and samples must be at least 1".into());
        }
        if self.classes == 0 || self.classes > self.samples {
            return bad(format!("need 1..={} classes, got {}", self.samples, self.classes));
        }
        if !(self.de_proportion > 0.0 && self.de_proportion <= 1.0) {
            return bad(format!("DE proportion must lie in (0, 1], got {}", self.de_proportion));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return bad(format!("phi must be nonnegative, got {}", self.phi));
        }
        Ok(())
    }

    /// Number of differentially expressed genes.
    pub fn de_genes(&self) -> usize {
        ((self.genes as f64 * self.de_proportion - 1e-9).ceil() as usize).clamp(1, self.genes)
    }

    /// Per-class sample counts; leftover samples go to the lowest classes.
    pub fn class_sizes(&self) -> Vec<usize> {
        let base = self.samples / self.classes;
        let extra = self.samples % self.classes;
        (0..self.classes).map(|k| base + usize::from(k < extra)).collect()
    }
}

/// Generating parameters of one simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameters {
    pub lambda: Vec<f64>,
    /// `class_diff[k][g]`
    pub class_diff: Vec<Vec<f64>>,
    pub train_size_factors: Vec<f64>,
    pub test_size_factors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub truth: TrueParameters,
}

/// Draws one training set and one independent test set.
pub fn generate_scenario<R: Rng + ?Sized>(sc: &SimScenario, rng: &mut R) -> Result<GeneratedData> {
    sc.validate()?;
    let exp = Exp::new(LAMBDA_RATE).expect("positive rate");
    let lambda: Vec<f64> = (0..sc.genes).map(|_| exp.sample(rng).max(LAMBDA_FLOOR)).collect();

    let normal = Normal::new(0.0, sc.sigma).expect("positive sigma");
    let de = sc.de_genes();
    let mut class_diff = vec![vec![1.0; sc.genes]; sc.classes];
    for g in 0..de {
        for row in class_diff.iter_mut() {
            row[g] = normal.sample(rng).exp();
        }
    }

    let labels: Vec<usize> = sc
        .class_sizes()
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    let gene_ids: Vec<String> = (1..=sc.genes).map(|g| format!("gene{g}")).collect();

    let (train, train_sf) = draw_set(sc, "train", &gene_ids, &labels, &lambda, &class_diff, rng)?;
    let (test, test_sf) = draw_set(sc, "test", &gene_ids, &labels, &lambda, &class_diff, rng)?;
    Ok(GeneratedData {
        train,
        test,
        truth: TrueParameters {
            lambda,
            class_diff,
            train_size_factors: train_sf,
            test_size_factors: test_sf,
        },
    })
}

fn draw_set<R: Rng + ?Sized>(
    sc: &SimScenario,
    prefix: &str,
    gene_ids: &[String],
    labels: &[usize],
    lambda: &[f64],
    class_diff: &[Vec<f64>],
    rng: &mut R,
) -> Result<(LabeledDataset, Vec<f64>)> {
    let n = sc.samples;
    let unif = Uniform::new_inclusive(SIZE_FACTOR_RANGE.0, SIZE_FACTOR_RANGE.1).expect("valid range");
    let size_factors: Vec<f64> = (0..n).map(|_| unif.sample(rng)).collect();
    let mut counts = vec![0u64; sc.genes * n];
    for (i, (&s, &k)) in size_factors.iter().zip(labels).enumerate() {
        for g in 0..sc.genes {
            counts[g * n + i] = sample_nb(s * lambda[g] * class_diff[k][g], sc.phi, rng);
        }
    }
    let sample_ids = (1..=n).map(|i| format!("{prefix}{i}")).collect();
    let matrix = CountMatrix::from_flat(gene_ids.to_vec(), sample_ids, counts)?;
    Ok((LabeledDataset::new(matrix, labels.to_vec(), sc.classes)?, size_factors))
}

/// Mean misclassification rate of one method over the completed replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub method: ClassifierMethod,
    pub mean_rate: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub skipped: usize,
    /// Rates of the completed replicates, aligned with `completed`.
    pub rates: Vec<f64>,
    /// Indices of the replicates that completed.
    pub completed: Vec<usize>,
}

/// Mean and standard error (sample sd over sqrt(r)) of `values`. The mean of
/// an empty slice is NaN; the standard error of fewer than two values is 0.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    let mean = if r == 0 { f64::NAN } else { values.iter().sum::<f64>() / r as f64 };
    let se = if r < 2 {
        0.0
    } else {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        (var / r as f64).sqrt()
    };
    (mean, se)
}

impl StudyResult {
    fn from_rates(method: ClassifierMethod, rates: Vec<f64>, completed: Vec<usize>, skipped: usize) -> Self {
        let (mean_rate, std_error) = mean_and_std_error(&rates);
        Self {
            method,
            mean_rate,
            std_error,
            replicates: rates.len(),
            skipped,
            rates,
            completed,
        }
    }
}

/// Runs `replicates` independent worlds and scores every method on each.
///
/// Replicate `r` draws from stream `r` of the scenario seed, so results do
/// not depend on thread scheduling. A replicate whose fit or prediction fails
/// is skipped for all methods and counted in `skipped`.
pub fn run_study(sc: &SimScenario, replicates: usize, methods: &[ClassifierMethod]) -> Result<Vec<StudyResult>> {
    run_study_with(sc, replicates, methods, &FitOptions::default())
}

pub fn run_study_with(
    sc: &SimScenario,
    replicates: usize,
    methods: &[ClassifierMethod],
    options: &FitOptions,
) -> Result<Vec<StudyResult>> {
    sc.validate()?;
    if replicates == 0 {
        return Err(NbldaError::Validation("replicates must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(NbldaError::Validation("no methods requested".into()));
    }
    let outcomes: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(sc, r as u64, methods, options).ok())
        .collect();

    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let completed: Vec<usize> = (0..replicates).filter(|&r| outcomes[r].is_some()).collect();
    let results = methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let rates = outcomes.iter().flatten().map(|rates| rates[j]).collect();
            StudyResult::from_rates(m, rates, completed.clone(), skipped)
        })
        .collect();
    Ok(results)
}

fn run_replicate(
    sc: &SimScenario,
    replicate: u64,
    methods: &[ClassifierMethod],
    options: &FitOptions,
) -> Result<Vec<f64>> {
    let mut rng: StreamRng = stream_rng(sc.seed, replicate);
    let data = generate_scenario(sc, &mut rng)?;
    let model = fit_nblda(&data.train, options)?;
    methods
        .iter()
        .map(|&m| {
            let predictions = predict(&model, data.test.matrix(), m)?;
            Ok(misclassification_rate(&predictions, data.test.labels()))
        })
        .collect()
}

/// Fixed single-gene setting of the score curve, replicated over `genes`
/// identical genes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSetting {
    pub x_star: u64,
    pub d: f64,
    pub s_star: f64,
    pub lambda: f64,
    pub genes: usize,
}

impl Default for CurveSetting {
    fn default() -> Self {
        Self {
            x_star: 10,
            d: 1.5,
            s_star: 1.0,
            lambda: 10.0,
            genes: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveMode {
    /// Grid values are a dispersion shared by every gene.
    Common,
    /// Grid values are degrees of freedom `r`; each gene gets an independent
    /// chi-squared(`r`) dispersion, redrawn for each grid point from stream
    /// `j` of `seed`.
    ChiSquared { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub nblda: f64,
    pub plda: f64,
}

/// NBLDA and PLDA scores without prior and constant terms, summed over the
/// genes of `setting`, for every grid value.
pub fn score_curve(setting: &CurveSetting, grid: &[f64], mode: CurveMode) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(NbldaError::Validation("score curve grid is empty".into()));
    }
    let x = setting.x_star as f64;
    let mean = setting.s_star * setting.lambda;
    let g = setting.genes as f64;
    let plda = g * plda_gene_term(x, mean, setting.d);
    grid.iter()
        .enumerate()
        .map(|(j, &v)| {
            let nblda = match mode {
                CurveMode::Common => {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(NbldaError::Validation(format!("dispersion {v} must be nonnegative")));
                    }
                    g * nblda_gene_term(x, mean, setting.d, v)
                }
                CurveMode::ChiSquared { seed } => {
                    let chi = ChiSquared::new(v).map_err(|_| {
                        NbldaError::Validation(format!("degrees of freedom {v} must be positive"))
                    })?;
                    let mut rng = stream_rng(seed, j as u64);
                    (0..setting.genes)
                        .map(|_| nblda_gene_term(x, mean, setting.d, chi.sample(&mut rng)))
                        .sum()
                }
            };
            Ok(CurvePoint { x: v, nblda, plda })
        })
        .collect()
}

/// `steps + 1` evenly spaced values from `start` to `end` inclusive.
pub fn linear_grid(start: f64, end: f64, steps: usize) -> Vec<f64> {
    if steps == 0 {
        return vec![start];
    }
    (0..=steps)
        .map(|j| if j == steps { end } else { start + (end - start) * j as f64 / steps as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::nb_log_pmf;

    #[test]
    fn poisson_draws_have_the_right_mean() {
        let mut rng = stream_rng(3, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_nb(3.0, 0.0, &mut rng) as f64).sum::<f64>() / n as f64;
        let band = 3.0 * (3.0f64 / n as f64).sqrt();
        assert!((mean - 3.0).abs() < band, "mean {mean}");
    }

    #[test]
    fn overdispersed_variance() {
        let mut rng = stream_rng(4, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_nb(10.0, 20.0, &mut rng) as f64).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 10.0 + 100.0 * 20.0;
        assert!((v - want).abs() / want < 0.1, "variance {v}");
    }

    #[test]
    fn empirical_pmf_matches() {
        let mut rng = stream_rng(5, 0);
        let n = 100_000;
        let mut hist = vec![0usize; 51];
        for _ in 0..n {
            let x = sample_nb(5.0, 1.0, &mut rng) as usize;
            if x <= 50 {
                hist[x] += 1;
            }
        }
        for (x, &c) in hist.iter().enumerate() {
            let p = nb_log_pmf(x as u64, 5.0, 1.0).exp();
            assert!((c as f64 / n as f64 - p).abs() < 0.01, "x={x}");
        }
    }

    #[test]
    fn full_de_draws_every_gene() {
        let sc = SimScenario {
            genes: 30,
            de_proportion: 1.0,
            ..SimScenario::default()
        };
        let data = generate_scenario(&sc, &mut stream_rng(1, 0)).unwrap();
        for row in &data.truth.class_diff {
            assert!(row.iter().all(|&d| d != 1.0));
        }
        let partial = SimScenario {
            de_proportion: 0.2,
            ..sc
        };
        assert_eq!(partial.de_genes(), 6);
        let data = generate_scenario(&partial, &mut stream_rng(1, 0)).unwrap();
        assert!(data.truth.class_diff[0][6..].iter().all(|&d| d == 1.0));
    }

    #[test]
    fn de_gene_counts() {
        for (p, want) in [(0.2, 20), (0.4, 40), (0.6, 60), (0.8, 80), (1.0, 100), (0.001, 1)] {
            let sc = SimScenario {
                de_proportion: p,
                ..SimScenario::default()
            };
            assert_eq!(sc.de_genes(), want);
        }
    }

    #[test]
    fn odd_sample_count_favours_class_one() {
        let sc = SimScenario {
            samples: 9,
            ..SimScenario::default()
        };
        assert_eq!(sc.class_sizes(), vec![5, 4]);
        let data = generate_scenario(&sc, &mut stream_rng(2, 0)).unwrap();
        assert_eq!(data.train.class_sizes(), vec![5, 4]);
        assert_eq!(data.test.n_samples(), 9);
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = SimScenario::default();
        let a = generate_scenario(&sc, &mut stream_rng(9, 2)).unwrap();
        let b = generate_scenario(&sc, &mut stream_rng(9, 2)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn invalid_scenarios() {
        for sc in [
            SimScenario { de_proportion: 0.0, ..SimScenario::default() },
            SimScenario { sigma: 0.0, ..SimScenario::default() },
            SimScenario { phi: -1.0, ..SimScenario::default() },
            SimScenario { genes: 0, ..SimScenario::default() },
        ] {
            assert!(sc.validate().is_err());
        }
        assert!(run_study(&SimScenario::default(), 0, &ClassifierMethod::ALL).is_err());
    }

    #[test]
    fn study_standard_error_formula() {
        let r = StudyResult::from_rates(ClassifierMethod::Nblda, vec![0.0, 0.5, 0.25, 0.25], vec![0, 1, 2, 3], 0);
        assert_eq!(r.mean_rate, 0.25);
        // sample variance 0.125 / 3
        assert!((r.std_error - (0.125f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn score_curve_limits() {
        let setting = CurveSetting::default();
        let want = 500.0 * (10.0 * 1.5f64.ln() - 15.0);
        let curve = score_curve(&setting, &[0.0, 1e-8, 0.1, 1.0], CurveMode::Common).unwrap();
        assert_eq!(curve[0].nblda, curve[0].plda);
        for p in &curve {
            assert_eq!(p.plda, want);
        }
        assert!((curve[1].nblda - want).abs() < 500.0 * 1e-4);
        assert!(curve[2].nblda < curve[1].nblda && curve[3].nblda < curve[2].nblda);
    }

    #[test]
    fn chi_squared_curve_is_seeded() {
        let setting = CurveSetting::default();
        let grid = linear_grid(0.1, 5.0, 49);
        let a = score_curve(&setting, &grid, CurveMode::ChiSquared { seed: 11 }).unwrap();
        let b = score_curve(&setting, &grid, CurveMode::ChiSquared { seed: 11 }).unwrap();
        assert_eq!(a, b);
        assert!(score_curve(&setting, &[0.0], CurveMode::ChiSquared { seed: 1 }).is_err());
        assert!(score_curve(&setting, &[], CurveMode::Common).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = linear_grid(0.0, 20.0, 200);
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[200], 20.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
    }
}
