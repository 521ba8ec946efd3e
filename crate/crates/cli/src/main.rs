//! `modesep` — scenario-driven sensitivity scans, optimal-coefficient
//! tables, direct-imaging crossing diagrams and Monte-Carlo estimation runs
//! for two-point-source separation measurements.
//!
//! Exit codes: 0 success, 2 scenario/argument validation failure,
//! 3 numerical or calibration failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use modesep_cli::output::{emit, Meta};
use modesep_cli::scenario::ScenarioFile;
use modesep_cli::{commands, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output path; defaults to the scenario's `output.path`, then stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Output format; defaults to the scenario's `output.format`.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads (0 or omitted: one per core).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides every seed in the scenario (crosstalk and Monte Carlo).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Parser)]
#[command(name = "modesep", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sensitivity M (and companions) over a separation scan.
    SensitivityScan(CommonArgs),
    /// Optimal linear-combination coefficients per mode and noise setting.
    Coefficients(CommonArgs),
    /// Crossing separation between demultiplexing and direct imaging over a
    /// noise-strength sweep.
    CrossingDiagram(CommonArgs),
    /// Monte-Carlo method-of-moments estimation run.
    Simulate(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (name, args): (&'static str, &CommonArgs) = match &cli.command {
        Command::SensitivityScan(a) => ("sensitivity-scan", a),
        Command::Coefficients(a) => ("coefficients", a),
        Command::CrossingDiagram(a) => ("crossing-diagram", a),
        Command::Simulate(a) => ("simulate", a),
    };
    if let Err(e) = run(name, args) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn run(name: &'static str, args: &CommonArgs) -> Result<(), CliError> {
    let (file, bytes) = ScenarioFile::load(&args.scenario)?;
    let mut resolved = file.resolve()?;

    if let Some(seed) = args.seed {
        if let Some(spec) = &mut resolved.scene.crosstalk {
            spec.seed = seed;
        }
        if let Some(mc) = &mut resolved.montecarlo {
            mc.seed = seed;
        }
    }

    let format = match args.format {
        Some(OutputFormat::Csv) => "csv".to_string(),
        Some(OutputFormat::Json) => "json".to_string(),
        None => resolved
            .output_format
            .clone()
            .unwrap_or_else(|| if name == "simulate" { "json" } else { "csv" }.to_string()),
    };
    let meta = Meta::new(name, &bytes, resolved.w, args.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::numerical(format!("thread pool: {e}")))?;
    let content = pool.install(|| match name {
        "sensitivity-scan" => commands::sensitivity_scan(&resolved, &meta, &format),
        "coefficients" => commands::coefficients(&resolved, &meta, &format),
        "crossing-diagram" => commands::crossing_diagram(&resolved, &meta, &format),
        "simulate" => commands::simulate(&resolved, &meta, &format),
        _ => unreachable!(),
    })?;

    let path = args
        .output
        .clone()
        .or_else(|| resolved.output_path.as_ref().map(PathBuf::from));
    emit(path.as_deref(), &content)
}
