//! `nblda` command-line interface.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nblda::{ClassifierMethod, Delimiter, Layout, SizeFactorMethod};

#[derive(Parser, Debug)]
#[command(name = "nblda", version, about = "Negative binomial / Poisson discriminant analysis for count data")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Output file; stdout when omitted. Written atomically.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    /// Output format for tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model on labeled counts and write it as JSON.
    Fit(FitArgs),
    /// Classify the samples of a count table with a fitted model.
    Predict(PredictArgs),
    /// Mean misclassification rate over repeated random train/test splits.
    Evaluate(EvaluateArgs),
    /// Per-gene dispersion estimates and a method recommendation.
    EstimateDispersion(DispersionArgs),
    /// Monte Carlo misclassification study on synthetic NB data.
    Simulate(SimulateArgs),
    /// Discriminant score as a function of dispersion.
    ScoreCurve(ScoreCurveArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    /// Genes as rows, samples as columns.
    Genes,
    /// Samples as rows, genes as columns.
    Samples,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Genes => Layout::GenesAsRows,
            LayoutArg::Samples => Layout::SamplesAsRows,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DelimiterArg {
    Tab,
    Comma,
}

impl From<DelimiterArg> for Delimiter {
    fn from(d: DelimiterArg) -> Self {
        match d {
            DelimiterArg::Tab => Delimiter::Tab,
            DelimiterArg::Comma => Delimiter::Comma,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SizeFactorArg {
    Total,
    MedianRatio,
    UpperQuartile,
}

impl From<SizeFactorArg> for SizeFactorMethod {
    fn from(s: SizeFactorArg) -> Self {
        match s {
            SizeFactorArg::Total => SizeFactorMethod::TotalCount,
            SizeFactorArg::MedianRatio => SizeFactorMethod::MedianRatio,
            SizeFactorArg::UpperQuartile => SizeFactorMethod::UpperQuartile,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nblda,
    Plda,
}

impl From<MethodArg> for ClassifierMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nblda => ClassifierMethod::Nblda,
            MethodArg::Plda => ClassifierMethod::Plda,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct CountsArgs {
    /// Count table: one header row of sample ids, one id column.
    #[arg(long)]
    pub counts: PathBuf,

    #[arg(long, value_enum, default_value_t = LayoutArg::Genes)]
    pub layout: LayoutArg,

    /// Field separator; guessed from the extension (.csv = comma) if omitted.
    #[arg(long, value_enum)]
    pub delimiter: Option<DelimiterArg>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingArgs {
    #[command(flatten)]
    pub counts: CountsArgs,

    /// Two columns: sample_id, class index (1-based). Header optional.
    #[arg(long)]
    pub labels: PathBuf,

    #[arg(long = "size-factor", value_enum, default_value_t = SizeFactorArg::Total)]
    pub size_factor: SizeFactorArg,

    /// Quantile used by the upper-quartile size factors.
    #[arg(long, default_value_t = 0.75)]
    pub quantile: f64,

    /// Keep only the N genes with the largest BSS/WSS ratio.
    #[arg(long = "top-genes")]
    pub top_genes: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DispersionChoice {
    /// Use this dispersion for every gene instead of estimating.
    #[arg(long, conflicts_with = "phi_file")]
    pub phi: Option<f64>,

    /// Per-gene dispersions: gene_id, phi (header optional).
    #[arg(long = "phi-file")]
    pub phi_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub training: TrainingArgs,

    #[command(flatten)]
    pub dispersion: DispersionChoice,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub counts: CountsArgs,

    #[arg(long, value_enum, default_value_t = MethodArg::Nblda)]
    pub method: MethodArg,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub training: TrainingArgs,

    #[command(flatten)]
    pub dispersion: DispersionChoice,

    #[arg(long, value_enum, default_value_t = MethodArg::Nblda)]
    pub method: MethodArg,

    /// Samples held out in each run.
    #[arg(long = "test-count")]
    pub test_count: usize,

    /// Number of random splits.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
}

#[derive(Args, Debug)]
pub struct DispersionArgs {
    #[command(flatten)]
    pub training: TrainingArgs,

    /// Average dispersion below which PLDA is recommended.
    #[arg(long, default_value_t = nblda::classifier::DEFAULT_RECOMMEND_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub genes: usize,

    /// Samples in each of the training and test sets.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,

    #[arg(long, default_value_t = 2)]
    pub classes: usize,

    /// Fraction of differentially expressed genes, in (0, 1].
    #[arg(long = "de-proportion", default_value_t = 0.8)]
    pub de_proportion: f64,

    /// Standard deviation of the log class differences.
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,

    /// Common dispersion of the generated counts.
    #[arg(long, default_value_t = 20.0)]
    pub phi: f64,

    #[arg(long, default_value_t = nblda::simulation::DEFAULT_REPLICATES)]
    pub replicates: usize,

    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Nblda, MethodArg::Plda])]
    pub methods: Vec<MethodArg>,

    /// Also write per-replicate rates to this file.
    #[arg(long = "per-replicate")]
    pub per_replicate: Option<PathBuf>,

    /// Write counts.tsv and labels.tsv of the first replicate (training and
    /// test samples together) into this directory.
    #[arg(long = "dump-data")]
    pub dump_data: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CurveModeArg {
    /// Grid values are a dispersion shared by all genes.
    Common,
    /// Grid values are chi-squared degrees of freedom for per-gene dispersions.
    ChiSquared,
}

#[derive(Args, Debug)]
pub struct ScoreCurveArgs {
    #[arg(long = "x-star", default_value_t = 10)]
    pub x_star: u64,

    #[arg(long, default_value_t = 1.5)]
    pub d: f64,

    #[arg(long = "s-star", default_value_t = 1.0)]
    pub s_star: f64,

    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,

    #[arg(long, default_value_t = 500)]
    pub genes: usize,

    #[arg(long, value_enum, default_value_t = CurveModeArg::Common)]
    pub mode: CurveModeArg,

    /// First grid value (default 0 for common, 0.1 for chi-squared).
    #[arg(long = "grid-start")]
    pub grid_start: Option<f64>,

    /// Last grid value (default 20 for common, 5 for chi-squared).
    #[arg(long = "grid-end")]
    pub grid_end: Option<f64>,

    /// Number of intervals between start and end.
    #[arg(long = "grid-steps")]
    pub grid_steps: Option<usize>,
}

fn configure_threads() {
    if let Some(n) = std::env::var("NBLDA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Ignore the error if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
