//! Discriminant analysis for overdispersed count data.
//!
//! Classifies vectors of nonnegative counts (typically RNA-Seq read counts,
//! genes by samples) with negative binomial linear discriminant analysis
//! (NBLDA) and its Poisson limit (PLDA). The crate covers the whole path:
//!
//! - [`count_data`]: count tables, labels, train/test splits, BSS/WSS gene
//!   filtering
//! - [`normalization`]: total-count, median-ratio and upper-quartile size
//!   factors
//! - [`dispersion`]: moment estimates with shrinkage toward a common target
//! - [`classifier`]: model fitting, discriminant scores, posteriors
//! - [`evaluation`]: mean misclassification over repeated random splits
//! - [`simulation`]: synthetic NB data, Monte Carlo misclassification
//!   studies, score-versus-dispersion curves
//! - [`model_io`]: versioned JSON model files

pub mod classifier;
pub mod count_data;
pub mod dispersion;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod normalization;
pub mod rng;
pub mod simulation;

pub use classifier::{
    fit_nblda, misclassification_rate, nb_log_pmf, nblda_scores, plda_scores, predict, recommend_method,
    ClassifierMethod, DispersionSource, FitOptions, NbldaModel, Prediction, ScoreVector,
};
pub use count_data::{
    bss_wss_filter, bss_wss_select, load_counts, load_counts_path, load_labels_path, load_labels, split_dataset, CountMatrix, Delimiter, LabeledDataset, Layout,
    SplitResult,
};
pub use dispersion::{shrink_dispersions, DispersionEstimate};
pub use error::{NbldaError, Result};
pub use evaluation::{evaluate_splits, EvaluationOptions, EvaluationResult};
pub use model_io::{model_from_json, model_to_json, read_model, write_model, MODEL_SCHEMA_VERSION};
pub use normalization::{estimate_size_factors, size_factor_for_test, SizeFactorMethod, SizeFactors};
pub use simulation::{
    generate_scenario, linear_grid, run_study, run_study_with, sample_nb, score_curve, CurveMode, CurvePoint, CurveSetting, GeneratedData,
    SimScenario, StudyResult,
};
