mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use bokeh_core::harness::{exit, exit_code_for};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;

/// Bokeh rendering toolkit: classical renderer, tiny U-Net inference,
/// metrics, dataset preparation and evaluation harness.
#[derive(Debug, Parser)]
#[command(name = "bokeh", version)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with defaults; flags win on conflict.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classical disparity-guided bokeh.
    Render(RenderArgs),
    /// Run the tiny U-Net on an image.
    Infer(InferArgs),
    /// PSNR/SSIM of a prediction directory against ground truth.
    Evaluate(EvaluateArgs),
    /// Challenge score from PSNR and runtime.
    Score(ScoreArgs),
    /// Discover pairs and estimate their alignment.
    Align(AlignArgs),
    /// Align, crop and downscale pairs.
    Prep(PrepArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the U-Net forward pass.
    Bench(BenchArgs),
    /// Rank leaderboard rows.
    Leaderboard(LeaderboardArgs),
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Single-channel PNG, larger = closer.
    #[arg(long)]
    pub disparity: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the foreground mask.
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    #[arg(long)]
    pub max_radius: Option<f64>,
    #[arg(long)]
    pub focal_disparity: Option<f64>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long)]
    pub feather: Option<f64>,
    /// Output bit depth (8 or 16).
    #[arg(long)]
    pub bits: Option<u32>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct NetArgs {
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f32>,
    /// Drop the encoder-decoder skip connections.
    #[arg(long)]
    pub no_skip: bool,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct InferArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Weight file; seeded random weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Measured runtime samples in ms; adds runtime stats and a score.
    #[arg(long, value_delimiter = ',')]
    pub runtime_ms: Vec<f64>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub psnr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub runtime_ms: Option<f64>,
    /// Normalisation constant; defaults to the Antins_cv calibration.
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignArgs {
    /// Directory of `<id>_wide.png` / `<id>_shallow.png` files.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Existing manifest to align instead of scanning.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub search: Option<usize>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepArgs {
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub search: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub bits: Option<u32>,
    /// Where to write the resulting manifest (default: <out-dir>/manifest.json).
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    /// Comma-separated term tags, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub terms: Vec<String>,
    /// Number of random samples per term.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Extra steps to report, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<f64>,
    /// Negative control: corrupt this term's analytic gradient.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// text or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchArgs {
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the weights used (useful with random weights).
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderboardArgs {
    /// CSV with `team,psnr,ssim,runtime_ms,score`; the published table when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad or missing command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let g = Globals {
        seed: cli.seed.or(cfg.get("seed")?).unwrap_or(0),
        jobs: cli.jobs.or(cfg.get("jobs")?).unwrap_or(0),
    };
    if g.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.jobs)
            .build_global()?;
    }
    match &cli.command {
        Command::Render(a) => commands::render(&cfg.merge("render", a)?),
        Command::Infer(a) => commands::infer(&cfg.merge("infer", a)?, &g),
        Command::Evaluate(a) => commands::evaluate(&cfg.merge("evaluate", a)?, &g),
        Command::Score(a) => commands::score(&cfg.merge("score", a)?),
        Command::Align(a) => commands::align(&cfg.merge("align", a)?),
        Command::Prep(a) => commands::prep(&cfg.merge("prep", a)?),
        Command::Gradcheck(a) => commands::gradcheck(&cfg.merge("gradcheck", a)?, &g),
        Command::Bench(a) => commands::bench(&cfg.merge("bench", a)?, &g),
        Command::Leaderboard(a) => commands::leaderboard(&cfg.merge("leaderboard", a)?),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return exit::USAGE;
        }
        if let Some(e) = cause.downcast_ref::<bokeh_core::Error>() {
            return exit_code_for(e);
        }
        if cause.is::<std::io::Error>() {
            return exit::IO;
        }
    }
    exit::VALIDATION
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
