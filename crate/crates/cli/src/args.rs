use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdpp::data::Benchmark;
use gdpp::loss::GdppVariant;
use gdpp::train::{GenLoss, ModelKind};

#[derive(Debug, Parser)]
#[command(
    name = "gdpp-lab",
    version,
    about = "Diversity-loss experiments on mixture-of-Gaussians benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration for one or more seeds.
    Train(Common),
    /// GAN vs GDPP-GAN on every benchmark, averaged over seeds.
    Table1(Common),
    /// Every loss variant on ring and grid, averaged over seeds.
    Ablate(Common),
    /// Batch-size and iteration sweeps.
    Sweep(SweepArgs),
    /// Metrics of a saved checkpoint.
    Eval(EvalArgs),
}

/// `off` or a loss variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdppChoice(pub Option<GdppVariant>);

fn parse_gdpp(s: &str) -> Result<GdppChoice, String> {
    if s == "off" {
        return Ok(GdppChoice(None));
    }
    s.parse()
        .map(|v| GdppChoice(Some(v)))
        .map_err(|_| format!("unknown value `{s}` (valid: off, full, magnitude, structure, unnorm, det)"))
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// ring, grid or highdim.
    #[arg(long, value_parser = |s: &str| s.parse::<Benchmark>().map_err(|e| e.to_string()))]
    pub benchmark: Option<Benchmark>,
    /// gan or vae.
    #[arg(long, value_parser = |s: &str| s.parse::<ModelKind>().map_err(|e| e.to_string()))]
    pub model: Option<ModelKind>,
    /// off, full, magnitude, structure, unnorm or det.
    #[arg(long, value_parser = parse_gdpp)]
    pub gdpp: Option<GdppChoice>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// First seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Output root; defaults to $GDPP_LAB_OUT, then `gdpp-runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// saturating or nonsaturating.
    #[arg(long, value_parser = |s: &str| s.parse::<GenLoss>().map_err(|e| e.to_string()))]
    pub gen_loss: Option<GenLoss>,
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parallel training threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Batch,
    Iterations,
    All,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Which sweep to run.
    #[arg(long, value_enum, default_value_t = SweepKind::All)]
    pub sweep: SweepKind,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub common: Common,
}
