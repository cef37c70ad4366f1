//! The `costs` subcommand: measure per-pair sampling and annotation costs
//! of every configured strategy over simulated pairs and print the table.

use std::path::Path;

use preflab_core::instance::Instance;
use preflab_core::rng;
use preflab_core::sampling::{sample_pair, CostLedger, StrategySpec};

use crate::config::RunConfig;

pub struct CostRow {
    pub strategy: String,
    pub mean_sampling: f64,
    pub mean_annotation: f64,
}

/// Measure mean per-pair costs over `pairs` simulated, labeled pairs.
pub fn measure_costs(
    config: &RunConfig,
    config_path: &Path,
    pairs: usize,
) -> anyhow::Result<Vec<CostRow>> {
    let instance = Instance::build(&config.instance_params(config_path))?;
    let mut rows = Vec::new();
    for spec in config.strategy_specs()? {
        rows.push(measure_strategy(&instance, &spec, pairs)?);
    }
    Ok(rows)
}

pub fn measure_strategy(
    instance: &Instance,
    spec: &StrategySpec,
    pairs: usize,
) -> anyhow::Result<CostRow> {
    let mut ledger = CostLedger::default();
    let mut stream = rng::stream(instance.seed, rng::TRAIN);
    for _ in 0..pairs {
        let x = instance.prompts.sample(&mut stream);
        let (a, b) = sample_pair(
            spec,
            &instance.theta0,
            &instance.reference,
            x,
            &mut stream,
            &mut ledger,
            &instance.space,
        )?;
        instance
            .oracle
            .label_pair(x, &a, &b, &mut stream, &mut ledger)?;
    }
    Ok(CostRow {
        strategy: spec.kind.name().to_string(),
        mean_sampling: ledger.sampling() as f64 / pairs as f64,
        mean_annotation: ledger.annotation() as f64 / pairs as f64,
    })
}

pub fn print_table(rows: &[CostRow]) {
    println!("{:<12} {:>14} {:>16}", "strategy", "sampling/pair", "annotation/pair");
    for r in rows {
        println!(
            "{:<12} {:>14.4} {:>16.4}",
            r.strategy, r.mean_sampling, r.mean_annotation
        );
    }
}
