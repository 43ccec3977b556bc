mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

/// Prior-free fair allocation toolkit for single-slot ad auctions.
///
/// Advertiser indices on the command line and in JSON inputs are 1-based.
#[derive(Debug, Parser)]
#[command(name = "fairalloc", version)]
pub struct Cli {
    /// JSON object supplying flags by long name; flags given on the command
    /// line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for the profiler (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate one auction and print the distribution as JSON.
    Allocate(AllocateArgs),
    /// Truthful payments from the payment identity, optionally with IC regret.
    Payments(PaymentsArgs),
    /// Welfare guarantees, stability curves and parameter calculators.
    Bounds(BoundsArgs),
    /// Search for the largest allocation change among similar value vectors.
    StabilityCheck(StabilityCheckArgs),
    /// Compare set totals of a composed allocator on two value vectors.
    SubsetCheck(SubsetCheckArgs),
    /// Bid-stability profile of a bid log, written as CSV.
    Profile(ProfileArgs),
    /// Aggregate welfare ratios of a bid log, written as CSV.
    Welfare(WelfareArgs),
    /// Match each profile of one family to the closest of another.
    Match(MatchArgs),
    /// Generate a synthetic bid log.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleKind {
    Ipa,
    CappedIpa,
    Pa,
    HighestBid,
    Uniform,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long, value_enum)]
    rule: RuleKind,

    /// IPA shape parameter; a comma-separated list where several rules are allowed.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    ell: Vec<f64>,

    /// Capped-IPA mixing weight in [0, 1].
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,

    /// Proportional-allocation exponent; a list where several rules are allowed.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    exponent: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[command(flatten)]
    rule: RuleArgs,

    /// Comma-separated advertiser values.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PaymentsArgs {
    #[command(flatten)]
    rule: RuleArgs,

    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    values: Vec<f64>,

    /// Advertiser to price (1-based); all advertisers when omitted.
    #[arg(long)]
    advertiser: Option<usize>,

    /// Quadrature tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    /// Also report IC regret over this many geometric misreports.
    #[arg(long)]
    deviations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Shape parameters to report on.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    ell: Vec<f64>,

    /// Number of advertisers for the prior-free upper bound.
    #[arg(long, default_value_t = 1_000_000)]
    k: usize,

    /// Similarities at which to tabulate the stability function.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,1.1,1.2,1.3,1.4,1.5,1.6,1.7,1.8,1.9,2",
        allow_negative_numbers = true
    )]
    lambda: Vec<f64>,

    /// Target ratio for the near-optimal capped-IPA parameters.
    #[arg(long, allow_negative_numbers = true)]
    near_optimal_alpha: Option<f64>,

    /// Write `ell,lambda,f_ell,alpha_ell` rows for every ell and lambda.
    #[arg(long, value_name = "PATH")]
    curves_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityCheckArgs {
    #[command(flatten)]
    rule: RuleArgs,

    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    values: Vec<f64>,

    /// Multiplicative similarity bound, > 1.
    #[arg(long, allow_negative_numbers = true)]
    lambda: f64,

    /// Random neighbours sampled on top of the directed extremes.
    #[arg(long, default_value_t = 1000)]
    samples: usize,

    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ComposedKind {
    ClusterCapped,
    PartitionHierarchical,
}

#[derive(Debug, Args)]
pub struct SubsetCheckArgs {
    #[arg(long, value_enum)]
    algorithm: ComposedKind,

    #[arg(long, allow_negative_numbers = true)]
    ell: f64,

    /// Set collection JSON, `{"k": .., "sets": [[..], ..]}`.
    #[arg(long, value_name = "PATH")]
    collection: PathBuf,

    /// Partition JSON, `{"k": .., "clusters": [[..], ..]}`, for the
    /// hierarchical algorithm; defaults to the finest partition no set crosses.
    #[arg(long, value_name = "PATH")]
    parts: Option<PathBuf>,

    /// Cluster-capped width parameter; defaults to the cluster width.
    #[arg(long)]
    n: Option<usize>,

    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    values: Vec<f64>,

    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    other_values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Bid log CSV (`day,period,seq,keyword_id,advertiser_id,bid`).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,

    /// Month to analyse, `YYYY-MM`.
    #[arg(long)]
    horizon: Option<String>,

    /// Output path; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    io: InputArgs,

    #[command(flatten)]
    rule: RuleArgs,

    #[arg(long, default_value_t = 0.67, allow_negative_numbers = true)]
    jaccard_min: f64,

    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    bucket_width: f64,

    #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
    percentile: f64,

    #[arg(long, default_value_t = 10_000)]
    max_samples: usize,

    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct WelfareArgs {
    #[command(flatten)]
    io: InputArgs,

    #[command(flatten)]
    rule: RuleArgs,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Profile CSV holding both families.
    #[arg(long, value_name = "PATH")]
    profiles: PathBuf,

    /// Algorithm whose profiles are matched.
    #[arg(long, default_value = "ipa")]
    from: String,

    /// Algorithm searched for the closest profile.
    #[arg(long, default_value = "pa")]
    to: String,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    seed: u64,

    /// Generator settings as JSON; individual flags below override it.
    #[arg(long, value_name = "PATH")]
    synth_config: Option<PathBuf>,

    #[arg(long)]
    keywords: Option<usize>,

    #[arg(long)]
    advertisers: Option<usize>,

    #[arg(long)]
    months: Option<usize>,

    #[arg(long, allow_negative_numbers = true)]
    bid_sigma: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    near_tie_fraction: Option<f64>,

    /// Output CSV path.
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Allocate(a) => commands::allocate(a),
        Command::Payments(a) => commands::payments(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::StabilityCheck(a) => commands::stability_check(a),
        Command::SubsetCheck(a) => commands::subset_check(a),
        Command::Profile(a) => commands::profile(a),
        Command::Welfare(a) => commands::welfare(a),
        Command::Match(a) => commands::match_profiles(a),
        Command::GenSynth(a) => commands::gen_synth(a),
    }
}

fn main() -> ExitCode {
    let argv = match config::merged_args(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(f) => return f.report(),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
