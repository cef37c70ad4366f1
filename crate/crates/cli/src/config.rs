//! Run configuration: a single TOML file describing the toy instance, the
//! training setup, the strategies and seeds to run, and the verification
//! harness parameters.
//!
//! ```toml
//! [instance]
//! vocab_size = 3
//! max_len = 2
//! prompts = 2
//! beta = 0.5
//! ref_scale = 0.5
//! oracle = "realizable"      # or a path to a reward table file
//! oracle_scale = 1.0
//! theta0 = "seeded"          # "reference" or "seeded"
//! theta0_scale = 1.2
//! seed = 0
//!
//! [train]
//! mode = "online"            # "online" or "iterative"
//! step_size = 0.3
//! rounds = 1
//! steps_per_round = 400
//! batch_size = 16
//! eval_interval = 50
//!
//! [run]
//! strategies = ["vanilla", "pilaf"]
//! seeds = [1, 2, 3, 4, 5]
//! output_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use preflab_core::dpo::{OptimizerKind, TrainConfig, TrainMode};
use preflab_core::instance::{InstanceParams, OracleSpec, Theta0Spec};
use preflab_core::sampling::{StrategyKind, StrategySpec};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceSection,
    #[serde(default)]
    pub train: TrainSection,
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    pub vocab_size: usize,
    pub max_len: usize,
    pub prompts: usize,
    #[serde(default)]
    pub prompt_weights: Option<Vec<f64>>,
    pub beta: f64,
    #[serde(default = "default_ref_scale")]
    pub ref_scale: f64,
    /// "realizable" or a path to a plain-text reward table.
    #[serde(default = "default_oracle")]
    pub oracle: String,
    #[serde(default = "default_oracle_scale")]
    pub oracle_scale: f64,
    /// "reference" or "seeded".
    #[serde(default = "default_theta0")]
    pub theta0: String,
    #[serde(default = "default_theta0_scale")]
    pub theta0_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ref_scale() -> f64 {
    0.5
}
fn default_oracle() -> String {
    "realizable".into()
}
fn default_oracle_scale() -> f64 {
    1.0
}
fn default_theta0() -> String {
    "seeded".into()
}
fn default_theta0_scale() -> f64 {
    1.2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: String,
    pub step_size: f64,
    pub rounds: usize,
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub epochs: usize,
    pub optimizer: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: "online".into(),
            step_size: 0.3,
            rounds: 1,
            steps_per_round: 400,
            batch_size: 16,
            eval_interval: 50,
            epochs: 2,
            optimizer: "gd".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_best_of_n")]
    pub best_of_n: usize,
}

fn default_best_of_n() -> usize {
    8
}

/// Harness parameters. Defaults are the calibrated verification instances;
/// `r_bound` is the hypothesis constant R of the alignment theorem.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub alignment_instances: usize,
    pub alignment_beta: f64,
    pub probe_t: f64,
    pub r_bound: f64,
    pub density_instances: usize,
    pub density_beta: f64,
    pub asymptotics_beta: f64,
    pub asymptotics_oracle_scale: f64,
    pub replications: usize,
    pub rep_samples: usize,
    pub rep_seed: u64,
    pub instance_seed_base: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            alignment_instances: 50,
            alignment_beta: 0.1,
            probe_t: 0.1,
            r_bound: 2.0,
            density_instances: 20,
            density_beta: 0.3,
            asymptotics_beta: 0.5,
            asymptotics_oracle_scale: 0.4,
            replications: 100,
            rep_samples: 2000,
            rep_seed: 9001,
            instance_seed_base: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        config.validate(path)?;
        Ok(config)
    }

    fn validate(&self, path: &Path) -> anyhow::Result<()> {
        if !(self.instance.beta > 0.0) {
            bail!("[instance] beta must be > 0");
        }
        if self.run.strategies.is_empty() {
            bail!("[run] strategies must name at least one strategy");
        }
        if self.run.seeds.is_empty() {
            bail!("[run] seeds must contain at least one seed");
        }
        for s in &self.run.strategies {
            StrategyKind::parse(s).map_err(|e| anyhow::anyhow!("[run] {e}"))?;
        }
        match self.instance.oracle.as_str() {
            "realizable" => {}
            file => {
                let oracle_path = resolve_relative(path, file);
                if !oracle_path.exists() {
                    bail!(
                        "[instance] oracle table file {} does not exist",
                        oracle_path.display()
                    );
                }
            }
        }
        match self.instance.theta0.as_str() {
            "reference" | "seeded" => {}
            other => bail!("[instance] theta0 must be 'reference' or 'seeded', got '{other}'"),
        }
        match self.train.mode.as_str() {
            "online" | "iterative" => {}
            other => bail!("[train] mode must be 'online' or 'iterative', got '{other}'"),
        }
        match self.train.optimizer.as_str() {
            "gd" | "adam" => {}
            other => bail!("[train] optimizer must be 'gd' or 'adam', got '{other}'"),
        }
        Ok(())
    }

    pub fn instance_params(&self, config_path: &Path) -> InstanceParams {
        let oracle = match self.instance.oracle.as_str() {
            "realizable" => OracleSpec::Realizable {
                scale: self.instance.oracle_scale,
            },
            file => OracleSpec::TableFile {
                path: resolve_relative(config_path, file),
            },
        };
        let theta0 = match self.instance.theta0.as_str() {
            "reference" => Theta0Spec::Reference,
            _ => Theta0Spec::Seeded {
                scale: self.instance.theta0_scale,
            },
        };
        InstanceParams {
            vocab_size: self.instance.vocab_size,
            max_len: self.instance.max_len,
            n_prompts: self.instance.prompts,
            prompt_weights: self.instance.prompt_weights.clone(),
            beta: self.instance.beta,
            ref_scale: self.instance.ref_scale,
            oracle,
            theta0,
            seed: self.instance.seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            beta: self.instance.beta,
            step_size: self.train.step_size,
            steps_per_round: self.train.steps_per_round,
            rounds: self.train.rounds,
            batch_size: self.train.batch_size,
            mode: match self.train.mode.as_str() {
                "iterative" => TrainMode::Iterative,
                _ => TrainMode::Online,
            },
            seed,
            eval_interval: self.train.eval_interval,
            epochs: self.train.epochs,
            optimizer: match self.train.optimizer.as_str() {
                "adam" => OptimizerKind::Adam,
                _ => OptimizerKind::Gd,
            },
        }
    }

    pub fn strategy_specs(&self) -> anyhow::Result<Vec<StrategySpec>> {
        self.run
            .strategies
            .iter()
            .map(|name| {
                let kind = StrategyKind::parse(name)?;
                let spec = StrategySpec::new(kind, self.instance.beta)?;
                Ok(if kind == StrategyKind::BestOfN {
                    spec.with_candidates(self.run.best_of_n)?
                } else {
                    spec
                })
            })
            .collect::<Result<Vec<_>, preflab_core::Error>>()
            .map_err(Into::into)
    }

    /// Output directory: CLI flag, then config, then `PREFLAB_OUT`, then
    /// `./out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(dir) = flag {
            return dir.to_path_buf();
        }
        if let Some(dir) = &self.run.output_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("PREFLAB_OUT") {
            return PathBuf::from(dir);
        }
        PathBuf::from("out")
    }
}

fn resolve_relative(config_path: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
