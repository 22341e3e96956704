//! `licp`: batch front end for the codec, the benchmark, latency tables,
//! architecture search and int8 calibration.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use licp::codec::QuantMode;
use licp::nas::Strategy;
use licp::quant::CalibPolicy;

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "licp",
    version,
    about = "Learned image codec with integer entropy coding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seed-initialized weights for a channel config.
    Init(InitArgs),
    /// Compress a png or bmp image.
    Encode(EncodeArgs),
    /// Reconstruct an image from a bitstream.
    Decode(DecodeArgs),
    /// Latency, throughput and quality over a directory of images.
    Bench(BenchArgs),
    /// Time conv/deconv shapes on this machine and write a latency table.
    MeasureLut(MeasureLutArgs),
    /// Search channel widths under FLOPs and latency limits.
    Search(SearchArgs),
    /// Derive int8 parameters from calibration images.
    Calibrate(CalibrateArgs),
    /// Describe a bitstream or weight file.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
struct InitArgs {
    /// `origin`, `nas`, or a JSON channel config file.
    #[arg(long, default_value = "origin")]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// float, hs-int or full-int.
    #[arg(long, default_value = "hs-int")]
    quant_mode: QuantMode,
    /// Threads used inside the transforms.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// png or bmp, by extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of png/bmp images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Parallel streams in the throughput pass.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Untimed round trips before measuring.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value = "hs-int")]
    quant_mode: QuantMode,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write per-image rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MeasureLutArgs {
    /// Measure the layers of this config (`origin`, `nas` or a JSON file).
    #[arg(long, conflicts_with_all = ["shapes", "space"])]
    config: Option<String>,
    /// File of `kind,in_c,out_c,kernel,stride,h,w` lines.
    #[arg(long, conflicts_with = "space")]
    shapes: Option<PathBuf>,
    /// JSON search space; every layer is measured at enough widths to
    /// cover the space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Output widths measured per input width with `--space`.
    #[arg(long, default_value_t = 2)]
    points: usize,
    /// Image height for `--config` and `--space`.
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = licp::nas::MIN_REPETITIONS)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Objective {
    /// Fewest multiply-accumulates.
    Flops,
    /// Lowest table latency (needs --lut).
    Latency,
    /// Most channels in total.
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Auto,
    Exhaustive,
    Evolutionary,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Exhaustive => Strategy::Exhaustive,
            StrategyArg::Evolutionary => Strategy::Evolutionary,
        }
    }
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// JSON search space; the codec space with widths 32..=256 step 4 if absent.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Latency table for latency limits and the latency objective.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    max_flops: Option<u64>,
    #[arg(long)]
    max_latency_ms: Option<f64>,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, value_enum, default_value_t = Objective::Capacity, conflicts_with = "scores")]
    objective: Objective,
    /// JSON list of `{"config": [...], "score": x}`; lower is better and
    /// unlisted configs rank last.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    strategy: StrategyArg,
    /// Where to write the full outcome as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of png/bmp calibration images (full-int only).
    #[arg(long)]
    images: Option<PathBuf>,
    /// hs-int re-derives the h_s parameters; full-int calibrates every layer.
    #[arg(long, default_value = "full-int")]
    quant_mode: QuantMode,
    /// `absmax` or `percentile:<p>`.
    #[arg(long, default_value = "percentile:99.99")]
    policy: CalibPolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InfoArgs {
    /// A bitstream or a weight file.
    #[arg(long)]
    input: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Init(a) => commands::init(&a.config, a.seed, &a.out),
        Command::Encode(a) => {
            commands::encode(&a.input, &a.model, &a.out, a.quant_mode, a.workers as usize)
        }
        Command::Decode(a) => commands::decode(&a.input, &a.model, &a.out, a.workers as usize),
        Command::Bench(a) => commands::bench(&commands::BenchJob {
            images: &a.images,
            model: &a.model,
            workers: a.workers as usize,
            warmup: a.warmup,
            mode: a.quant_mode,
            json: a.json.as_deref(),
            csv: a.csv.as_deref(),
        }),
        Command::MeasureLut(a) => {
            let hw = (a.height, a.width);
            let source = match (a.config, a.shapes, a.space) {
                (Some(c), None, None) => commands::Shapes::Config(c, hw),
                (None, Some(p), None) => commands::Shapes::File(p),
                (None, None, Some(p)) => commands::Shapes::Space(p, hw, a.points),
                _ => {
                    return Err(CliError::Usage(
                        "one of --config, --shapes or --space is required".into(),
                    ))
                }
            };
            commands::measure_lut(&source, a.repetitions, a.seed, &a.out)
        }
        Command::Search(a) => commands::search(&commands::SearchJob {
            space: a.space.as_deref(),
            lut: a.lut.as_deref(),
            max_flops: a.max_flops,
            max_latency_ms: a.max_latency_ms,
            input_hw: (a.height, a.width),
            objective: match (a.scores, a.objective) {
                (Some(p), _) => commands::Score::File(p),
                (None, Objective::Flops) => commands::Score::Flops,
                (None, Objective::Latency) => commands::Score::Latency,
                (None, Objective::Capacity) => commands::Score::Capacity,
            },
            budget: a.budget,
            seed: a.seed,
            strategy: a.strategy.into(),
            out: a.out.as_deref(),
        }),
        Command::Calibrate(a) => commands::calibrate(
            &a.model,
            a.images.as_deref(),
            a.quant_mode,
            a.policy,
            &a.out,
        ),
        Command::Info(a) => commands::info(&a.input),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(match e.kind() {
                clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    "a subcommand is required, see --help".to_string()
                }
                _ => first_line(&e.to_string()),
            });
            eprintln!("error: {}: {err}", err.kind());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), first_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines()
        .map(|l| l.trim().trim_start_matches("error:").trim())
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string()
}
