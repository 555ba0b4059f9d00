use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "metam", version, about = "Goal-oriented discovery of join augmentations for a downstream task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search a repository for augmentations that lift a task's utility to θ.
    Run(RunArgs),
    /// Generate a semi-synthetic repository with planted augmentations.
    Synth(SynthArgs),
    /// Compare strategies over seeded semi-synthetic instances.
    Bench(BenchArgs),
    /// Dump candidate profile vectors as CSV.
    Profile(ProfileArgs),
    /// Build and persist the join index of a repository.
    Index(IndexArgs),
}

/// `auto` or a positive integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tau(pub Option<usize>);

pub fn parse_tau(s: &str) -> Result<Tau, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Tau(None));
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected `auto` or a positive integer, got {s:?}")),
        Ok(n) => Ok(Tau(Some(n))),
    }
}

#[derive(Args, Debug, Clone)]
pub struct DiscoveryArgs {
    /// Minimum key containment for a join edge.
    #[arg(long)]
    pub containment: Option<f64>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// Comma-separated profile names.
    #[arg(long, value_delimiter = ',')]
    pub profiles: Option<Vec<String>>,
    /// Uninformative random profiles to append.
    #[arg(long, default_value_t = 0)]
    pub random_profiles: usize,
    /// Prebuilt join index from `metam index`.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Replay a previous run from its manifest.json.
    #[arg(long, conflicts_with_all = ["repo", "input", "task", "theta"])]
    pub replay: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub repo: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub input: Option<PathBuf>,
    /// Task description (JSON).
    #[arg(long, required_unless_present = "replay")]
    pub task: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = metam::clustering::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value = "auto", value_parser = parse_tau)]
    pub tau: Tau,
    #[arg(long, default_value = "metam")]
    pub strategy: String,
    #[arg(long, default_value_t = metam::search::DEFAULT_MAX_QUERIES)]
    pub max_queries: usize,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long)]
    pub max_solution_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable group probes.
    #[arg(long)]
    pub no_group: bool,
    #[command(flatten)]
    pub discovery: DiscoveryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator spec (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "metam,mw,uniform,overlap")]
    pub strategies: Vec<String>,
    /// Number of seeds, run as 0..N.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = metam::search::DEFAULT_MAX_QUERIES)]
    pub max_queries: usize,
    #[arg(long, default_value_t = metam::clustering::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value = "auto", value_parser = parse_tau)]
    pub tau: Tau,
    #[arg(long, default_value_t = 0)]
    pub random_profiles: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Target column profiles are paired with.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub discovery: DiscoveryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long, default_value_t = metam::discovery::DEFAULT_SIGNATURE_SIZE)]
    pub signature_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}
