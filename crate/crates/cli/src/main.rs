mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genrank::kernel::KernelKind;

/// Estimate how many experiments a study needs for its results to generalize.
#[derive(Debug, Parser)]
#[command(name = "genrank", version)]
pub struct Cli {
    /// Worker threads; defaults to the number of cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate n* for every configuration of a long-format result table.
    Analyze(AnalyzeArgs),
    /// Add experiments in batches until the results are generalizable.
    Plan(PlanArgs),
    /// Compare n* estimated from small samples against the true n* of a synthetic distribution.
    Simulate(SimulateArgs),
    /// Repeat the significance-vs-generalizability experiment on a two-ranking distribution.
    DemoSignificance(DemoArgs),
    /// List every ranking of a number of alternatives.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Borda,
    Jaccard,
    Mallows,
    Rbf,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Borda => KernelKind::Borda,
            KernelArg::Jaccard => KernelKind::Jaccard,
            KernelArg::Mallows => KernelKind::Mallows,
            KernelArg::Rbf => KernelKind::Rbf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Disjoint subsamples without replacement.
    Subsample,
    /// Independent resamples with replacement.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitArg {
    Free,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value = "mallows")]
    pub kernel: KernelArg,
    /// Borda or Mallows bandwidth [default: 1/n_a for Borda, 2/(n_a(n_a-1)) for Mallows].
    #[arg(long)]
    pub nu: Option<f64>,
    /// RBF bandwidth [default: median heuristic].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of best tiers compared by the Jaccard kernel [default: 1].
    #[arg(long)]
    pub topk: Option<usize>,
    /// Alternative tracked by the Borda kernel, by name (synthetic alternatives are a0, a1, ...).
    #[arg(long)]
    pub target_alternative: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Desired generalizability α*.
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    /// Similarity threshold δ*, mapped to ε* by the kernel.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Resampling repetitions per sample size.
    #[arg(long, default_value_t = 100)]
    pub nrep: usize,
    #[arg(long, env = "GENRANK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Resampling scheme [default: subsample; bootstrap for simulate].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value = "free")]
    pub fit: FitArg,
    /// Output file [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Long-format CSV, one score per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Study schema (TOML, or JSON by extension).
    #[arg(long)]
    pub schema: PathBuf,
    /// Comma-separated α* values; overrides --alpha.
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// Comma-separated δ* values; overrides --delta.
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    /// Minimum fraction of alternatives evaluated per condition [default: schema value, else 0.8].
    #[arg(long)]
    pub coverage_row: Option<f64>,
    /// Minimum fraction of conditions covered per alternative [default: schema value, else 0.8].
    #[arg(long)]
    pub coverage_col: Option<f64>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    /// Uniform over permutations.
    Uniform,
    /// Uniform over rankings with ties.
    UniformTies,
    /// Two rankings of five alternatives with masses 0.55 and 0.45.
    TwoPoint,
    /// A single ranking.
    PointMass,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    pub source: SourceArg,
    /// Alternatives of the synthetic distribution (ignored by two-point).
    #[arg(long, default_value_t = 4)]
    pub n_alternatives: usize,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// JSON array of already collected results (rank vectors or score vectors);
    /// replaces the synthetic source.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Experiments added per iteration.
    #[arg(long, default_value_t = 20)]
    pub n0: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_n: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Preliminary sample sizes N.
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
    pub n_values: Vec<usize>,
    /// Repetitions per N.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Monte-Carlo draws per n for the true n*.
    #[arg(long, default_value_t = 2000)]
    pub exact_draws: usize,
    /// Largest n scanned for the true n*.
    #[arg(long, default_value_t = 512)]
    pub exact_n_max: usize,
    /// Smallest n on the quantile grid.
    #[arg(long, default_value_t = 1)]
    pub min_n: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Results per sample.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Sample size at which generalizability is measured.
    #[arg(long, default_value_t = 10)]
    pub n_gen: usize,
    /// Level of the Friedman and Conover–Iman tests.
    #[arg(long, default_value_t = 0.05)]
    pub significance: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub n_alternatives: usize,
    /// Include rankings with ties.
    #[arg(long)]
    pub with_ties: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(commands::EXIT_INPUT);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
