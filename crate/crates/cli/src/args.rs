use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tsexp", version, about = "Causal effects and randomization tests for time series experiments")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for result files.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a potential-outcome process under an assignment mechanism.
    Simulate(SimulateArgs),
    /// Lag/step effect estimates with variance bounds.
    Estimate(EstimateArgs),
    /// Exact randomization and conservative CLT tests.
    Test(TestArgs),
    /// Pooled tests across the units of a panel file.
    Pool(PoolArgs),
    /// Convert order/trade records into a slippage experiment file.
    Slip(SlipArgs),
    /// Run the simulation study and write plot-ready files.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Experiment CSV (t, ts, y, w, p1).
    #[arg(long)]
    pub input: PathBuf,

    /// Mechanism JSON; without it the p1 column is used as a known schedule.
    #[arg(long)]
    pub mechanism: Option<PathBuf>,

    #[arg(long, default_value = "unit")]
    pub unit_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProxyArg {
    Zero,
    Lagged,
}

#[derive(Debug, Args)]
pub struct EstimandArgs {
    /// Lags, comma separated (one result per lag).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub p: Vec<usize>,

    /// Number of earlier assignments averaged over (step effect).
    #[arg(long, default_value_t = 0)]
    pub q: usize,

    /// Contrast of two treatment suffixes, e.g. `11:00`.
    #[arg(long)]
    pub m_period: Option<String>,

    /// Subtract a prediction built from data up to t-p-1.
    #[arg(long, value_enum)]
    pub proxy: Option<ProxyArg>,

    /// Use the standardized statistic.
    #[arg(long)]
    pub standardized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieRuleArg {
    Strict,
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Process JSON (family, mu0, mu1, phi/theta, sigma0, sigma1, noise).
    #[arg(long)]
    pub spec: PathBuf,

    /// Mechanism JSON (default: Bernoulli 1/2).
    #[arg(long)]
    pub mechanism: Option<PathBuf>,

    #[arg(long = "T", default_value_t = 100)]
    pub len: usize,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Largest lag for which the true effect series is written.
    #[arg(long, default_value_t = 3)]
    pub max_p: usize,

    #[arg(long, default_value = "unit")]
    pub unit_id: String,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub estimand: EstimandArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestMethodArg {
    Exact,
    Conservative,
    Both,
}

#[derive(Debug, Args)]
pub struct TestingArgs {
    /// Monte Carlo replicates.
    #[arg(long = "M", default_value_t = 1000)]
    pub replicates: usize,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, value_enum, default_value = "strict")]
    pub tie_rule: TieRuleArg,

    #[arg(long, value_enum, default_value = "two-sided")]
    pub alternative: AlternativeArg,

    /// Write the replicate statistics for histograms.
    #[arg(long)]
    pub keep_draws: bool,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub estimand: EstimandArgs,
    #[command(flatten)]
    pub testing: TestingArgs,

    #[arg(long, value_enum, default_value = "both")]
    pub method: TestMethodArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolMethodArg {
    Exact,
    Conservative,
    Fisher,
    All,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Panel CSV (unit_id, t, ts, y, w, p1).
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long)]
    pub mechanism: Option<PathBuf>,

    /// Treatment paths were assigned independently across units.
    #[arg(long)]
    pub independent_units: bool,

    #[command(flatten)]
    pub estimand: EstimandArgs,
    #[command(flatten)]
    pub testing: TestingArgs,

    #[arg(long, value_enum, default_value = "all")]
    pub method: PoolMethodArg,
}

#[derive(Debug, Args)]
pub struct SlipArgs {
    /// Orders CSV, one row per trade.
    #[arg(long)]
    pub input: PathBuf,

    /// Mechanism JSON; piecewise breakpoints may be given as timestamps.
    #[arg(long)]
    pub mechanism: PathBuf,

    #[arg(long, default_value = "unit")]
    pub unit_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyPart {
    Clt,
    Null,
    Power,
    Estimators,
    Pooled,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub seed: Option<u64>,

    /// Outer replications (datasets) per study cell.
    #[arg(long, default_value_t = 2000)]
    pub outer: usize,

    #[arg(long = "M", default_value_t = 1000)]
    pub replicates: usize,

    #[arg(long = "T", default_value_t = 100)]
    pub len: usize,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Series lengths for the heavy-tailed normality study.
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub cauchy_lens: Vec<usize>,

    /// Fixed potential-outcome draws averaged per length.
    #[arg(long, default_value_t = 20)]
    pub noise_draws: usize,

    #[arg(long, value_enum, default_value = "strict")]
    pub tie_rule: TieRuleArg,

    /// Studies to run (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub only: Vec<StudyPart>,
}
