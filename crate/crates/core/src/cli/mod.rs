//! The `flames` command line: `gen`, `run`, `verify`, `bench`, `recall`.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
//! configuration error.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use serde_json::{Map, Value};

pub use manifest::{manifest_path_for, RunManifest};

use crate::analysis::{self, bench, recall, BoundReport};
use crate::error::FlamesError;
use crate::events::{generate_periodic, generate_poisson, ingest_events, write_events, Geometry, TimestampOrder};
use crate::model::config::{ConvMode, ModelConfig, Variant};
use crate::model::Model;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "flames", version, about = "Event-driven spiking state-space toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event file.
    Gen(GenArgs),
    /// Run the model forward on an event file.
    Run(RunArgs),
    /// Check the analytical bounds on random systems.
    Verify(VerifyArgs),
    /// Time dense and low-rank matrix-vector products.
    Bench(BenchArgs),
    /// Delayed-recall comparison against a single time-constant LIF layer.
    Recall(RecallArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("generator").required(true).args(["periodic", "poisson"])))]
pub struct GenArgs {
    /// Spike every PERIOD seconds on every channel.
    #[arg(long, value_name = "PERIOD")]
    pub periodic: Option<f64>,
    /// Poisson spikes at RATE Hz per channel.
    #[arg(long, value_name = "RATE")]
    pub poisson: Option<f64>,
    #[arg(long)]
    pub duration: f64,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON object of model settings; `variant` picks the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub events: PathBuf,
    /// Sensor size as WIDTHxHEIGHT when the file has no header.
    #[arg(long, value_parser = parse_geometry)]
    pub geometry: Option<Geometry>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub no_dendrite: bool,
    #[arg(long)]
    pub no_sa_hippo: bool,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Tiny,
    Small,
    Normal,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tiny => Variant::Tiny,
            VariantArg::Small => Variant::Small,
            VariantArg::Normal => Variant::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Recurrent,
    Fft,
}

impl From<ModeArg> for ConvMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Recurrent => ConvMode::Recurrent,
            ModeArg::Fft => ConvMode::Fft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Norm,
    Taylor,
    Lyapunov,
    Ultimate,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// State dimension (largest dimension for the Lyapunov suites).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "verify.json")]
    pub out: PathBuf,
    /// Compare each Taylor order against the next order's bound.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub rank: usize,
    #[arg(long, default_value_t = bench::MIN_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecallArgs {
    /// JSON object overriding experiment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,10,25,50")]
    pub delays: Vec<usize>,
    #[arg(long, default_value_t = 400)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "recall.csv")]
    pub out: PathBuf,
}

fn parse_geometry(s: &str) -> Result<Geometry, String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse::<u32>().map_err(|e| format!("width: {e}"))?;
    let h = h.parse::<u32>().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("width and height must be positive".into());
    }
    Ok(Geometry::new(w, h))
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Failure(m) => f.write_str(m),
        }
    }
}

fn usage(e: FlamesError) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn io_failure(path: &Path, e: std::io::Error) -> CliError {
    failure(FlamesError::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn finish(mut manifest: RunManifest, path: &Path, started: Instant) -> Result<(), CliError> {
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    write_json(path, &manifest)
}

fn json_object(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = read_text(path)?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(FlamesError::invalid("config", "expected a JSON object"))),
        Err(e) => Err(usage(FlamesError::invalid("config", e.to_string()))),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let stream = match (args.periodic, args.poisson) {
        (Some(period), None) => generate_periodic(period, args.duration, args.channels),
        (None, Some(rate)) => generate_poisson(rate, args.duration, args.channels, args.seed),
        _ => unreachable!("clap enforces exactly one generator"),
    }
    .map_err(usage)?;
    write_with(&args.out, |w| write_events(&stream, w))?;
    info!("wrote {} events to {}", stream.len(), args.out.display());
    let mut m = RunManifest::new("gen", args.seed);
    m.output(&args.out);
    finish(m, &manifest_path_for(&args.out), started)
}

pub fn load_model_config(args: &RunArgs) -> Result<ModelConfig, CliError> {
    let mut overrides = match &args.config {
        Some(p) => json_object(p)?,
        None => Map::new(),
    };
    if let Some(v) = args.variant {
        overrides.insert("variant".into(), serde_json::to_value(Variant::from(v)).map_err(failure)?);
    }
    if args.no_dendrite {
        overrides.insert("no_dendrite".into(), Value::Bool(true));
    }
    if args.no_sa_hippo {
        overrides.insert("no_sa_hippo".into(), Value::Bool(true));
    }
    if let Some(mode) = args.mode {
        overrides.insert("mode".into(), serde_json::to_value(ConvMode::from(mode)).map_err(failure)?);
    }
    ModelConfig::from_json(&Value::Object(overrides).to_string()).map_err(usage)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let config = load_model_config(args)?;
    let file = File::open(&args.events).map_err(|e| io_failure(&args.events, e))?;
    let stream = ingest_events(BufReader::new(file), args.geometry, TimestampOrder::Strict)
        .map_err(|e| failure(format!("{}: {e}", args.events.display())))?;
    let mut model = Model::new(&config, stream.geometry(), args.seed).map_err(usage)?;
    let output = model.forward(&stream).map_err(failure)?;

    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let scores = args.out.join("scores.json");
    let diagnostics = args.out.join("diagnostics.csv");
    write_json(&scores, &output)?;
    write_with(&diagnostics, |w| output.write_diagnostics_csv(w))?;

    let mut m = RunManifest::new("run", args.seed);
    m.config_path = args.config.as_ref().map(|p| p.display().to_string());
    m.input(&args.events);
    m.output(&scores);
    m.output(&diagnostics);
    finish(m, &args.out.join("manifest.json"), started)
}

pub fn run_suites(args: &VerifyArgs) -> Vec<BoundReport> {
    let selected: Vec<Suite> = match args.suite {
        Suite::All => vec![Suite::Norm, Suite::Taylor, Suite::Lyapunov, Suite::Ultimate],
        s => vec![s],
    };
    selected
        .into_iter()
        .map(|suite| match suite {
            Suite::Norm => {
                let mut cfg = analysis::NormBoundConfig {
                    seed: args.seed,
                    ..Default::default()
                };
                if let Some(n) = args.n {
                    cfg.order = n;
                }
                if let Some(t) = args.trials {
                    cfg.trials = t;
                }
                analysis::verify_norm_bound(&cfg)
            }
            Suite::Taylor => {
                let mut cfg = analysis::TaylorConfig {
                    seed: args.seed,
                    order_shift: usize::from(args.inject_fault),
                    ..Default::default()
                };
                if let Some(n) = args.n {
                    cfg.dim = n;
                }
                if let Some(t) = args.trials {
                    cfg.trials = t;
                }
                analysis::verify_taylor_bound(&cfg)
            }
            Suite::Lyapunov | Suite::Ultimate => {
                let mut cfg = analysis::UltimateConfig {
                    seed: args.seed,
                    ..Default::default()
                };
                if let Some(n) = args.n {
                    cfg.max_order = n;
                }
                if let Some(t) = args.trials {
                    cfg.trials = t;
                }
                if suite == Suite::Lyapunov {
                    analysis::verify_lyapunov(&cfg)
                } else {
                    analysis::verify_ultimate_bound(&cfg)
                }
            }
            Suite::All => unreachable!("expanded above"),
        })
        .collect()
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if args.n == Some(0) {
        return Err(usage(FlamesError::invalid("n", "must be at least 1")));
    }
    let reports = run_suites(args);
    for r in &reports {
        println!(
            "{}: trials={} samples={} violations={} premise_violated={} max_slack={:.3e}",
            r.name, r.trials, r.samples, r.violations, r.premise_violated, r.max_slack
        );
    }
    write_json(&args.out, &reports)?;
    let mut m = RunManifest::new("verify", args.seed);
    m.output(&args.out);
    finish(m, &manifest_path_for(&args.out), started)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failure(format!("bound violations in: {}", failed.join(", "))))
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if args.reps < bench::MIN_REPS {
        warn!("reps={} is below {}; medians are noisy", args.reps, bench::MIN_REPS);
    }
    let cfg = analysis::BenchConfig {
        sizes: args.sizes.clone(),
        rank: args.rank,
        reps: args.reps,
        seed: args.seed,
    };
    let rows = analysis::bench_complexity(&cfg).map_err(usage)?;
    write_with(&args.out, |w| bench::write_csv(&rows, args.reps, w))?;
    for op in ["dense", "nplr", "lowrank"] {
        for (a, b, ratio) in bench::doubling_ratios(&rows, op) {
            println!("{op}: N {a} -> {b} ratio {ratio:.2}");
        }
    }
    let mut m = RunManifest::new("bench", args.seed);
    m.output(&args.out);
    finish(m, &manifest_path_for(&args.out), started)
}

pub fn cmd_recall(args: &RecallArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = match &args.config {
        Some(p) => serde_json::from_value(Value::Object(json_object(p)?))
            .map_err(|e| usage(FlamesError::invalid("config", e.to_string())))?,
        None => analysis::RecallConfig::default(),
    };
    let rows = analysis::delayed_recall_experiment(&cfg, &args.delays, args.trials, args.seed).map_err(usage)?;
    write_with(&args.out, |w| recall::write_csv(&rows, w))?;
    for r in &rows {
        println!(
            "delay {}: flames {:.3} lif {:.3} (controls {:.3} / {:.3})",
            r.delay, r.flames_accuracy, r.lif_accuracy, r.flames_control, r.lif_control
        );
    }
    let mut m = RunManifest::new("recall", args.seed);
    m.config_path = args.config.as_ref().map(|p| p.display().to_string());
    m.output(&args.out);
    finish(m, &manifest_path_for(&args.out), started)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Recall(a) => cmd_recall(a),
    }
}

fn init_threads() {
    let Ok(raw) = std::env::var("FLAMES_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("FLAMES_THREADS ignored: {e}");
            }
        }
        _ => warn!("FLAMES_THREADS={raw:?} is not a positive integer; ignored"),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_threads();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
