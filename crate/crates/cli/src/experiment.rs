//! The `run` subcommand: execute every (strategy, seed) combination,
//! stream each trajectory to its own CSV, and assemble a summary.
//!
//! CSV column contract (stable):
//!
//! - per run `run_<strategy>_<seed>.csv`:
//!   `step,expected_reward,kl,j,sampling_cost,annotation_cost`
//! - `summary.csv`:
//!   `strategy,seed,reward,kl,j,sampling_cost,annotation_cost`
//!
//! Outputs are a pure function of (config, seeds): reruns are
//! byte-identical. Floats are printed with Rust's shortest round-trip
//! formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use preflab_core::dpo::{train, TrajectoryRecord};
use preflab_core::instance::Instance;
use preflab_core::objective::evaluate_j;

use crate::config::RunConfig;

pub struct RunOutputs {
    pub run_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
}

struct SummaryRow {
    strategy: String,
    seed: u64,
    reward: f64,
    kl: f64,
    j: f64,
    sampling_cost: u64,
    annotation_cost: u64,
}

pub fn run_experiment(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
) -> anyhow::Result<RunOutputs> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output dir {}", out_dir.display()))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = run_all(config, config_path, out_dir, &mut written);
    if result.is_err() {
        // Partial outputs are removed so a failed run leaves nothing behind.
        for f in &written {
            let _ = fs::remove_file(f);
        }
    }
    result
}

fn run_all(
    config: &RunConfig,
    config_path: &Path,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> anyhow::Result<RunOutputs> {
    let instance = Instance::build(&config.instance_params(config_path))?;
    let strategies = config.strategy_specs()?;
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut run_files = Vec::new();

    for spec in &strategies {
        for &seed in &config.run.seeds {
            let train_config = config.train_config(seed);
            let (final_theta, trajectory) = train(
                &train_config,
                &instance.theta0,
                &instance.reference,
                &instance.oracle,
                &instance.prompts,
                spec,
                &instance.space,
            )?;
            let name = format!("run_{}_{}.csv", spec.kind.name(), seed);
            let path = out_dir.join(&name);
            write_trajectory(&path, &trajectory)?;
            written.push(path.clone());
            run_files.push(path);

            let (reward, kl, j, sampling, annotation) = match trajectory.last() {
                Some(last) => (
                    last.expected_reward,
                    last.kl,
                    last.j_value,
                    last.sampling_cost,
                    last.annotation_cost,
                ),
                None => {
                    let report = evaluate_j(
                        &final_theta,
                        &instance.reference,
                        instance.beta,
                        &instance.oracle,
                        &instance.prompts,
                        &instance.space,
                    );
                    (report.expected_reward, report.kl, report.j_value, 0, 0)
                }
            };
            rows.push(SummaryRow {
                strategy: spec.kind.name().to_string(),
                seed,
                reward,
                kl,
                j,
                sampling_cost: sampling,
                annotation_cost: annotation,
            });
        }
    }

    let summary_file = out_dir.join("summary.csv");
    write_summary(&summary_file, &rows)?;
    written.push(summary_file.clone());
    Ok(RunOutputs {
        run_files,
        summary_file,
    })
}

fn write_trajectory(path: &Path, trajectory: &[TrajectoryRecord]) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "step,expected_reward,kl,j,sampling_cost,annotation_cost")?;
    for r in trajectory {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.step, r.expected_reward, r.kl, r.j_value, r.sampling_cost, r.annotation_cost
        )?;
    }
    Ok(())
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "strategy,seed,reward,kl,j,sampling_cost,annotation_cost")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.strategy, r.seed, r.reward, r.kl, r.j, r.sampling_cost, r.annotation_cost
        )?;
    }
    Ok(())
}
