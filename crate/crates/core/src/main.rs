use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use owseg::graphcut::Connectivity;
use owseg::pipeline::{self, PipelineError, RunConfig};
use owseg::tagging::Strategy;

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "owseg",
    version,
    about = "Open-world anomaly segmentation over precomputed embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every image in a manifest and write outputs plus report.json.
    Run(RunArgs),
    /// Check all inputs without processing; prints a JSON issue list.
    Validate(RunArgs),
    /// Score a directory of earlier run outputs against ground truth.
    Metrics(MetricsArgs),
    /// Write a small synthetic dataset with planted anomalies.
    MakeFixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Best,
    All,
    MeanSimilarity,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    Four,
    Eight,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    tag_vocabulary: Option<PathBuf>,
    #[arg(long)]
    tags_dir: Option<PathBuf>,
    #[arg(long = "out")]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    temperature: Option<f32>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    low_frac: Option<f64>,
    #[arg(long)]
    high_frac: Option<f64>,
    #[arg(long, value_enum)]
    connectivity: Option<ConnectivityArg>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Abort on the first failing image.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `<image_id>/` outputs of an earlier run.
    #[arg(long)]
    predictions: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => pipeline::load_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v.into();
                }
            )*};
        }
        set!(temperature, sigma, lambda, low_frac, high_frac, top_k, workers);
        for (slot, value) in [
            (&mut cfg.manifest, self.manifest),
            (&mut cfg.vocabulary, self.vocabulary),
            (&mut cfg.dictionary, self.dictionary),
            (&mut cfg.tag_vocabulary, self.tag_vocabulary),
            (&mut cfg.tags_dir, self.tags_dir),
            (&mut cfg.output, self.output),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        if let Some(s) = self.strategy {
            cfg.strategy = match s {
                StrategyArg::Best => Strategy::Best,
                StrategyArg::All => Strategy::All,
                StrategyArg::MeanSimilarity => Strategy::MeanSimilarity,
            };
        }
        if let Some(c) = self.connectivity {
            cfg.connectivity = match c {
                ConnectivityArg::Four => Connectivity::Four,
                ConnectivityArg::Eight => Connectivity::Eight,
            };
        }
        cfg.strict |= self.strict;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(args: RunArgs) -> Result<u8> {
    let cfg = args.into_config()?;
    let report = pipeline::run_pipeline(&cfg)?;
    info!(
        "{} images processed, {} failed",
        report.per_image.len() + report.failed,
        report.failed
    );
    for f in &report.errors {
        error!("{}: {}", f.image_id, f.error);
    }
    Ok(if report.failed > 0 { EXIT_RUNTIME } else { 0 })
}

fn validate(args: RunArgs) -> Result<u8> {
    let cfg = args.into_config()?;
    let report = pipeline::validate_inputs(&cfg);
    print_json(&report)?;
    Ok(if report.is_ok() { 0 } else { EXIT_INVALID })
}

fn metrics(args: MetricsArgs) -> Result<u8> {
    let report = pipeline::evaluate_predictions(&args.manifest, &args.predictions)?;
    match &args.out {
        Some(p) => {
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
        }
        None => print_json(&report)?,
    }
    Ok(if report.failed > 0 { EXIT_RUNTIME } else { 0 })
}

fn make_fixture(args: FixtureArgs) -> Result<u8> {
    let paths = owseg::fixture::write_demo_set(&args.out, args.seed)
        .with_context(|| format!("writing fixture to {}", args.out.display()))?;
    println!("manifest: {}", paths.manifest.display());
    println!("vocabulary: {}", paths.vocabulary.display());
    println!("dictionary: {}", paths.dictionary.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Metrics(a) => metrics(a),
        Command::MakeFixture(a) => make_fixture(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(EXIT_RUNTIME, |p| p.exit_code() as u8);
            ExitCode::from(code)
        }
    }
}
