use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use neuroinfo_cli::commands;
use neuroinfo_cli::config::ExperimentConfig;
use neuroinfo_cli::error::{CliError, CliResult};
use neuroinfo_cli::verify::run_verify;

#[derive(Parser)]
#[command(
    name = "neuroinfo",
    version,
    about = "Neuron importance measures and cumulative ablation experiments"
)]
struct Cli {
    /// Replicates or plans processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every replicate and save checkpoints.
    Train(ConfigArgs),
    /// Compute per-neuron measures on the validation split.
    Measure(ConfigArgs),
    /// Run the configured cumulative ablation plans.
    Ablate(ConfigArgs),
    /// Merge training, measure and ablation CSVs into report.csv.
    Report(ConfigArgs),
    /// Run the built-in property and oracle checks.
    Verify,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let report = commands::train(&cfg, cli.workers)?;
            for r in &report.replicates {
                match (&r.error, r.test_accuracy) {
                    (Some(e), _) => println!("replicate {}: failed: {e}", r.replicate),
                    (None, Some(acc)) => println!("replicate {}: test accuracy {acc:.4}", r.replicate),
                    (None, None) => {}
                }
            }
            match report.failures() {
                0 => Ok(()),
                failed => Err(CliError::ReplicatesFailed {
                    failed,
                    total: report.replicates.len(),
                }),
            }
        }
        Command::Measure(args) => {
            let cfg = args.load()?;
            let results = commands::measure(&cfg, cli.workers)?;
            println!("measured {} replicates", results.len());
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let report = commands::ablate(&cfg, cli.workers)?;
            for (label, curve) in &report.curves {
                println!("{label}: {} points", curve.points.len());
            }
            Ok(())
        }
        Command::Report(args) => {
            let cfg = args.load()?;
            let rows = commands::report(&cfg)?;
            println!(
                "wrote {rows} rows to {}",
                commands::Layout::new(&cfg).report().display()
            );
            Ok(())
        }
        Command::Verify => {
            let lines = run_verify()?;
            let mut failed = Vec::new();
            for line in &lines {
                println!(
                    "{} {}: {}",
                    if line.passed { "PASS" } else { "FAIL" },
                    line.name,
                    line.detail
                );
                if !line.passed {
                    failed.push(line.name.as_str());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Verification(failed.join(", ")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
