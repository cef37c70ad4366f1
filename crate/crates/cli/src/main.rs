use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use preflab_cli::config::RunConfig;
use preflab_cli::verify_cmd::{self, VerifyKind};
use preflab_cli::{costs, experiment};

/// Desk-scale preference-sampling laboratory.
///
/// Exit codes: 0 success, 1 verification assertion failure, 2 configuration
/// or hypothesis error.
#[derive(Parser)]
#[command(name = "preflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training for every configured (strategy, seed) and write CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides config and PREFLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Keep only strategies whose name matches the filter.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run theorem-verification harnesses.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// One of: alignment, density, asymptotics, all.
        #[arg(long, default_value = "all")]
        which: String,
    },
    /// Measure per-pair sampling/annotation costs of configured strategies.
    Costs {
        #[arg(long)]
        config: PathBuf,
        /// Number of simulated pairs per strategy.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
}

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            strategy,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seeds) = seeds {
                if seeds.is_empty() {
                    anyhow::bail!("--seeds override must not be empty");
                }
                cfg.run.seeds = seeds;
            }
            if let Some(filter) = strategy {
                cfg.run.strategies.retain(|s| s.contains(&filter));
                if cfg.run.strategies.is_empty() {
                    anyhow::bail!("strategy filter '{filter}' matches nothing");
                }
            }
            let out_dir = cfg.output_dir(out.as_deref());
            let outputs = experiment::run_experiment(&cfg, &config, &out_dir)?;
            println!(
                "wrote {} run file(s) and {}",
                outputs.run_files.len(),
                outputs.summary_file.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, out, which } => {
            let cfg = RunConfig::load(&config)?;
            let which = VerifyKind::parse(&which)?;
            let out_dir = cfg.output_dir(out.as_deref());
            let outcome = verify_cmd::run_verify(&cfg, which, &out_dir)?;
            if outcome.invalid {
                eprintln!("verification hypotheses violated; see report");
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
            if !outcome.passed {
                return Ok(ExitCode::from(EXIT_ASSERTION));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Costs { config, pairs } => {
            let cfg = RunConfig::load(&config)?;
            let rows = costs::measure_costs(&cfg, &config, pairs)?;
            costs::print_table(&rows);
            Ok(ExitCode::SUCCESS)
        }
    }
}
