use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "treetilt", version, about = "Tree-graph models for nonmonotone missing data")]
pub struct Cli {
    /// JSON file of flag values; explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: logical cores)
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the complete-case mixture and the edge odds under a tree
    Fit(FitArgs),
    /// Multiply impute the missing cells from a fitted model
    Impute(ImputeArgs),
    /// Choose a tree graph from data or build a structural one
    SelectGraph(SelectArgs),
    /// Nonparametric bootstrap of the fitted parameters
    Bootstrap(BootstrapArgs),
    /// Exponential-tilt sensitivity sweep of a fitted model
    Sensitivity(SensitivityArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
    /// Count tree graphs over all patterns or a given pattern set
    CountTrees(CountArgs),
    /// Draw a random tree graph
    SampleTree(SampleArgs),
    /// Check that a graph file is a tree graph
    ValidateGraph(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    GaussianDiag,
    BinomialProduct,
    NegativeBinomial,
    Pareto,
    Beta,
    Dirichlet,
    GaussianKde,
}

/// Distribution family and mixture fitting controls.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Component family
    #[arg(long, value_enum)]
    pub family: Option<FamilyKind>,

    /// Binomial trial counts: one value for every column, or one per column
    #[arg(long = "N", value_name = "N[,N...]")]
    #[serde(rename = "N")]
    pub trials: Option<String>,

    /// Negative-binomial size parameters (one value or one per column)
    #[arg(long, value_name = "R[,R...]")]
    pub nb_r: Option<String>,

    /// Pareto scales (default: column minima of the observed values)
    #[arg(long, value_name = "S[,S...]")]
    pub scale: Option<String>,

    /// KDE bandwidths (default: Silverman's rule on the complete cases)
    #[arg(long, value_name = "H[,H...]")]
    pub bandwidth: Option<String>,

    /// Mixture components
    #[arg(long)]
    pub k: Option<usize>,

    /// Choose K by BIC over an inclusive range such as 1..5
    #[arg(long, value_name = "LO..HI", conflicts_with = "k")]
    pub k_range: Option<String>,

    /// EM random restarts
    #[arg(long)]
    pub restarts: Option<usize>,

    /// EM relative log-likelihood tolerance
    #[arg(long)]
    pub tol: Option<f64>,

    /// EM iteration cap
    #[arg(long)]
    pub max_iter: Option<usize>,

    /// Minimum rows per pattern
    #[arg(long)]
    pub min_rows: Option<usize>,

    /// Ridge penalty of the edge logistic fits
    #[arg(long)]
    pub ridge: Option<f64>,

    /// Gaussian families: fit mean-shift odds only (no squared terms)
    #[arg(long)]
    pub freeze_quadratic: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Input CSV (header row; empty or NA cells are missing)
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Tree: ccmv, lncmv, rncmv, or a tree JSON file
    #[arg(long, value_name = "TREE")]
    pub tree: Option<String>,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output model JSON
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMethod {
    Conjugate,
    Rejection,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImputeArgs {
    /// Input CSV
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Fitted model JSON
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Number of imputations
    #[arg(long)]
    pub m: Option<usize>,

    /// Sampler
    #[arg(long, value_enum, default_value = "conjugate")]
    pub method: ImputeMethod,

    /// Rejection attempts per row and imputation
    #[arg(long)]
    pub max_attempts: Option<u64>,

    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for imputed_{m}.csv and provenance.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMethod {
    Parent,
    Child,
    Energy,
    Lncmv,
    Rncmv,
    Ccmv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    /// Input CSV
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Selection rule
    #[arg(long, value_enum)]
    pub method: Option<SelectMethod>,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// RNG seed (parent and child methods)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for tree.json and scores.csv
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiKind {
    Normal,
    Percentile,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BootstrapArgs {
    /// Input CSV
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Tree: ccmv, lncmv, rncmv, or a tree JSON file
    #[arg(long, value_name = "TREE")]
    pub tree: Option<String>,

    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Bootstrap replicates
    #[arg(long)]
    pub b: Option<usize>,

    /// Refit retries per replicate
    #[arg(long)]
    pub retries: Option<usize>,

    /// Confidence level
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    /// Interval construction
    #[arg(long, value_enum, default_value = "normal")]
    pub ci: CiKind,

    /// Largest tolerated |corr| between blocks masked independent
    #[arg(long, default_value_t = 0.1)]
    pub block_threshold: f64,

    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for draws.csv and summary.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    /// Input CSV (used to refit edges for alternative trees)
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Fitted model JSON
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Sweep JSON: {"rho": [[...], ...], "trees": {"id": "lncmv" | tree}, "functional": {...}}
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,

    /// Coordinate (1-based) whose full-data mean is reported; overrides the grid file
    #[arg(long)]
    pub coordinate: Option<usize>,

    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Consistency,
    Coverage,
    Recovery,
    KdeMnar,
    KdeMar,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Study to run
    #[arg(long, value_enum)]
    pub study: Option<StudyKind>,

    /// Sample sizes, comma separated
    #[arg(long, value_name = "N[,N...]")]
    pub n_grid: Option<String>,

    /// Replicates per sample size
    #[arg(long)]
    pub u: Option<usize>,

    /// Bootstrap replicates (coverage)
    #[arg(long)]
    pub b: Option<usize>,

    /// Mixture components
    #[arg(long)]
    pub k: Option<usize>,

    /// EM random restarts
    #[arg(long)]
    pub restarts: Option<usize>,

    /// Confidence level (coverage)
    #[arg(long)]
    pub confidence: Option<f64>,

    /// Generator JSON for the discrete studies (default: built-in design)
    #[arg(long, value_name = "FILE")]
    pub generator: Option<PathBuf>,

    /// Complete continuous CSV for the KDE studies (default: synthetic)
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// KDE study iterations
    #[arg(long)]
    pub iterations: Option<usize>,

    /// Synthetic rows for the KDE studies
    #[arg(long)]
    pub n: Option<usize>,

    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for the CSV tables and config.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CountArgs {
    /// Number of variables; all 2^d patterns
    #[arg(long, conflicts_with = "patterns")]
    pub d: Option<usize>,

    /// Comma-separated pattern bit strings
    #[arg(long, value_name = "P[,P...]")]
    pub patterns: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    /// Number of variables; all 2^d patterns
    #[arg(long, conflicts_with = "patterns")]
    pub d: Option<usize>,

    /// Comma-separated pattern bit strings
    #[arg(long, value_name = "P[,P...]")]
    pub patterns: Option<String>,

    /// JSON list of {"tree": ..., "weight": w}; default is uniform
    #[arg(long, value_name = "FILE")]
    pub pmf: Option<PathBuf>,

    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output tree JSON (default: stdout)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    /// Graph JSON
    #[arg(long, value_name = "FILE")]
    pub tree: Option<PathBuf>,
}
