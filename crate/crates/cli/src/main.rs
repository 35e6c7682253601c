use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

mod commands;
mod output;

use output::{Format, RunManifest};

/// Cross-temporal forecast reconciliation.
#[derive(Debug, Parser)]
#[command(name = "ctrecon", version, about)]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconcile stacked forecast rows (point forecasts or sample draws).
    Reconcile(commands::ReconcileArgs),
    /// Draw base forecast samples from models fitted to a dataset.
    Sample(commands::SampleArgs),
    /// Score forecast samples against an observation.
    Score(commands::ScoreArgs),
    /// Run the Monte Carlo study on the simulated AR(2) hierarchy.
    Simulate(commands::SimulateArgs),
    /// Rolling-origin experiment on a dataset.
    Pipeline(commands::PipelineArgs),
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<ctrecon::Error>())
        .any(ctrecon::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        anyhow::ensure!(jobs > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let started = Instant::now();
    let ctx = commands::Context {
        seed: cli.seed,
        format: cli.format,
    };
    let (name, artifacts, derivation) = match &cli.command {
        Command::Reconcile(a) => ("reconcile", commands::reconcile(&ctx, a)?, "none"),
        Command::Sample(a) => ("sample", commands::sample(&ctx, a)?, commands::SAMPLE_STREAMS),
        Command::Score(a) => ("score", commands::score(&ctx, a)?, "none"),
        Command::Simulate(a) => ("simulate", commands::simulate(&ctx, a)?, commands::SIMULATE_STREAMS),
        Command::Pipeline(a) => ("pipeline", commands::pipeline(&ctx, a)?, commands::PIPELINE_STREAMS),
    };
    let manifest = RunManifest {
        tool: "ctrecon",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        seed: cli.seed,
        jobs: cli.jobs,
        format: cli.format,
        seed_derivation: derivation,
        config: serde_json::Value::Null,
        inputs: Vec::new(),
        outputs: Vec::new(),
        elapsed_seconds: 0.0,
    };
    for path in artifacts.commit(&cli.output_dir, manifest, started)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == EXIT_NUMERICAL { "numerical" } else { "validation" };
            let report = serde_json::json!({ "status": "error", "kind": kind, "message": format!("{err:#}") });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
