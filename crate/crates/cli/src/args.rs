use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kinmix", version, about = "Kinetic parametric imaging: simulate, fit and evaluate dynamic PET phantoms")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a phantom and write noisy replicates plus the ground truth.
    Simulate(SimulateArgs),
    /// Estimate a Potts partition-function table.
    Partition(PartitionArgs),
    /// Fit one image with SCF, SKMS or SMM.
    Fit(FitArgs),
    /// Choose the SMM component count by BIC.
    SelectG(SelectArgs),
    /// Bias and classification report for a set of fitted maps.
    Evaluate(EvaluateArgs),
    /// Quick-look export of a parametric map or image frame.
    Export(ExportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    GaussianHetero,
    ScaledPoisson,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Phantom JSON; the built-in 32 x 32 phantom when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Input function CSV overriding the phantom's.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Frame scheme CSV overriding the phantom's.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NoiseArg::GaussianHetero)]
    pub noise: NoiseArg,
    #[arg(long, default_value_t = kinmix_core::phantom::DEFAULT_NOISE_LEVEL)]
    pub level: f64,
    /// Replicate `r` uses noise seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub nx: usize,
    #[arg(long)]
    pub ny: usize,
    #[arg(long)]
    pub g: usize,
    #[arg(long, default_value_t = kinmix_core::potts::DEFAULT_BETA_MAX)]
    pub beta_max: f64,
    #[arg(long, default_value_t = kinmix_core::potts::DEFAULT_GRID_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enumerate all labelings instead of Monte Carlo (tiny lattices only).
    #[arg(long)]
    pub exact: bool,
    /// Output CSV, or a directory (no extension) that receives the cache-named table and its JSON header.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Scf,
    Skms,
    Smm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Map,
    Full,
}

#[derive(Debug, Args)]
pub struct ModelInputs {
    /// DPET image to fit.
    #[arg(long)]
    pub image: PathBuf,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input function CSV; the built-in input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Frame scheme CSV; the built-in cardiac scheme when omitted.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableSource {
    /// Partition table CSV for this lattice and G.
    #[arg(long, conflicts_with = "table_dir")]
    pub table: Option<PathBuf>,
    /// Directory of cached tables, looked up by lattice, G and settings.
    #[arg(long)]
    pub table_dir: Option<PathBuf>,
    /// Estimate missing tables into `--table-dir`.
    #[arg(long, requires = "table_dir")]
    pub build_tables: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    pub tables: TableSource,
    /// Component count (SKMS clusters, or SMM components including noise).
    #[arg(long)]
    pub g: Option<usize>,
    /// SKMS spatial weight.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// SMM run mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    pub tables: TableSource,
    #[arg(long, default_value_t = 2)]
    pub gmin: usize,
    #[arg(long, default_value_t = 6)]
    pub gmax: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory searched recursively for `map.csv` files, one per realization.
    #[arg(long)]
    pub fits: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Phantom JSON supplying region names.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Pgm,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    #[value(name = "K1")]
    K1,
    #[value(name = "k2")]
    K2,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Parametric map CSV or DPET image.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Parameter taken from a map CSV.
    #[arg(long, value_enum, default_value_t = ParamArg::K1)]
    pub param: ParamArg,
    /// Frame taken from a DPET image.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
