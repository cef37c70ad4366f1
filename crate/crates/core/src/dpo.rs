//! Empirical and population preference losses, their analytic gradients,
//! and the iterative/online training loops.
//!
//! The empirical loss over labeled triples is
//! `-(1/n) sum_i w_i log sigmoid(r(x_i, win_i) - r(x_i, lose_i))`
//! with `r` the implicit policy reward and optional per-prompt weights.
//! Its gradient is assembled sparsely from per-step softmax Jacobians; no
//! autodiff is involved, which is what the finite-difference harnesses
//! check.
//!
//! The population loss fixes a pair distribution (the data-collection
//! distribution) and takes the exact Bradley-Terry expectation over labels
//! by enumeration. Freezing the distribution is deliberate: gradients are
//! taken with respect to the policy being trained, not the policy that
//! collected the data, matching how a fixed dataset behaves.

use crate::lm::{LogitPolicy, PromptSpace, ResponseSpace};
use crate::math::{log_sigmoid, sigmoid};
use crate::objective::evaluate_j;
use crate::reward::{implicit_reward, implicit_reward_table, OracleReward, PreferenceTriple};
use crate::rng::{self, Stream};
use crate::sampling::{
    compute_weights, sample_pair, strategy_pair_weights, CostLedger, StrategyKind, StrategySpec,
    WeightFn,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// A batch of labeled preference triples with optional per-triple weights.
/// Absent weights mean the standard unweighted loss.
#[derive(Clone, Debug, Default)]
pub struct DpoBatch {
    pub triples: Vec<PreferenceTriple>,
    pub weights: Option<Vec<f64>>,
}

impl DpoBatch {
    pub fn unweighted(triples: Vec<PreferenceTriple>) -> Self {
        Self {
            triples,
            weights: None,
        }
    }

    pub fn weighted(triples: Vec<PreferenceTriple>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != triples.len() {
            return Err(Error::ShapeMismatch(
                "one weight per triple required".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidSpec("weights must be positive".into()));
        }
        Ok(Self {
            triples,
            weights: Some(weights),
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }
}

/// `-(1/n) sum_i w_i log sigmoid(margin_i)` over the batch.
pub fn empirical_loss(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    batch: &DpoBatch,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, t) in batch.triples.iter().enumerate() {
        let margin = implicit_reward(theta, reference, beta, t.prompt, &t.winner)?
            - implicit_reward(theta, reference, beta, t.prompt, &t.loser)?;
        total -= batch.weight(i) * log_sigmoid(margin);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`empirical_loss`] with respect to the full logit
/// table: each triple contributes
/// `-(w_i/n) sigmoid(-margin_i) (grad r(win) - grad r(lose))`.
pub fn loss_gradient(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    batch: &DpoBatch,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = vec![0.0; theta.dim()];
    let inv_n = 1.0 / batch.len() as f64;
    for (i, t) in batch.triples.iter().enumerate() {
        let margin = implicit_reward(theta, reference, beta, t.prompt, &t.winner)?
            - implicit_reward(theta, reference, beta, t.prompt, &t.loser)?;
        let coef = batch.weight(i) * inv_n * sigmoid(-margin) * beta;
        // grad r = beta * grad log pi; the reference term has no theta
        // dependence.
        theta.accumulate_grad_log_prob(t.prompt, &t.winner, -coef, &mut grad)?;
        theta.accumulate_grad_log_prob(t.prompt, &t.loser, coef, &mut grad)?;
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Population loss over an exact pair distribution
// ---------------------------------------------------------------------------

/// A frozen data-collection distribution: per-prompt symmetrized pair
/// densities plus the per-prompt loss weights. Both are captured at the
/// policy that generated the data.
#[derive(Clone, Debug)]
pub struct PairDistribution {
    /// `mubar[x][a * s + b]`, symmetrized.
    pub mubar: Vec<Vec<f64>>,
    pub weights: WeightFn,
}

/// Build the exact symmetrized pair distribution of a strategy at `theta`.
/// Only strategies with a closed-form density are supported; the tilted
/// strategy also carries its loss weights, others weight uniformly.
pub fn strategy_distribution(
    spec: &StrategySpec,
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<PairDistribution> {
    let (mubar, weights) = strategy_pair_weights(spec, theta, reference, prompts, space)?;
    Ok(PairDistribution { mubar, weights })
}

/// Exact population loss at `theta` under a frozen pair distribution:
/// the Bradley-Terry label expectation of the weighted negative
/// log-likelihood, enumerated over prompts and ordered pairs.
pub fn population_loss_at(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    dist: &PairDistribution,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> f64 {
    let s = space.len();
    let mut total = 0.0;
    for x in 0..prompts.len() {
        let r_theta = implicit_reward_table(theta, reference, beta, x, space);
        let r_star = oracle.row(x);
        let w = dist.weights.weight(x);
        let mut acc = 0.0;
        for a in 0..s {
            for b in 0..s {
                let m = dist.mubar[x][a * s + b];
                if m == 0.0 {
                    continue;
                }
                let ds = r_star[a] - r_star[b];
                let dt = r_theta[a] - r_theta[b];
                acc += m * (sigmoid(ds) * -log_sigmoid(dt) + sigmoid(-ds) * -log_sigmoid(-dt));
            }
        }
        total += prompts.weight(x) * w * acc;
    }
    total
}

/// Analytic gradient of [`population_loss_at`]:
/// `-E[ w(x) (sigmoid(dr*) - sigmoid(dr)) (grad r(a) - grad r(b)) ]`.
pub fn population_loss_gradient_at(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    dist: &PairDistribution,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Vec<f64> {
    let s = space.len();
    let mut grad = vec![0.0; theta.dim()];
    for x in 0..prompts.len() {
        let r_theta = implicit_reward_table(theta, reference, beta, x, space);
        let r_star = oracle.row(x);
        let w = dist.weights.weight(x);
        // Net per-response coefficient: response y appears as first element
        // with +coef and as second with -coef.
        let mut net = vec![0.0; s];
        for a in 0..s {
            for b in 0..s {
                let m = dist.mubar[x][a * s + b];
                if m == 0.0 {
                    continue;
                }
                let coef = m * w * (sigmoid(r_star[a] - r_star[b]) - sigmoid(r_theta[a] - r_theta[b]));
                net[a] += coef;
                net[b] -= coef;
            }
        }
        for (i, seq) in space.iter().enumerate() {
            if net[i] != 0.0 {
                theta
                    .accumulate_grad_log_prob(
                        x,
                        seq,
                        -prompts.weight(x) * net[i] * beta,
                        &mut grad,
                    )
                    .expect("enumerated sequences are valid");
            }
        }
    }
    grad
}

/// Exact gradient of the population loss with the pair distribution taken
/// at `theta` itself. Supported for strategies with closed-form densities.
pub fn population_loss_gradient(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    spec: &StrategySpec,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<Vec<f64>> {
    let dist = strategy_distribution(spec, theta, reference, prompts, space)?;
    Ok(population_loss_gradient_at(
        theta, reference, beta, &dist, oracle, prompts, space,
    ))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Collect a full prompt sweep each round, then run the configured
    /// epochs of minibatch steps over it.
    Iterative,
    /// Collect a fresh batch at every step and use it exactly once.
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step size.
    Gd,
    /// Adam with standard defaults; for end-to-end comparison runs.
    Adam,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub beta: f64,
    pub step_size: f64,
    pub steps_per_round: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub mode: TrainMode,
    pub seed: u64,
    /// Evaluation cadence in steps.
    pub eval_interval: usize,
    /// Passes over each regenerated dataset in iterative mode.
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidSpec("beta must be > 0".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidSpec("step_size must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidSpec("eval_interval must be >= 1".into()));
        }
        if self.mode == TrainMode::Iterative && self.epochs == 0 {
            return Err(Error::InvalidSpec("iterative mode needs epochs >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluation snapshot along a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub expected_reward: f64,
    pub kl: f64,
    pub j_value: f64,
    pub sampling_cost: u64,
    pub annotation_cost: u64,
    pub strategy: String,
    pub seed: u64,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

/// Run the training loop: per step, sample prompts, generate candidate
/// pairs with the strategy, label them with the oracle, and descend the
/// batch gradient. Returns the final policy and the evaluation trajectory.
pub fn train(
    config: &TrainConfig,
    theta0: &LogitPolicy,
    reference: &LogitPolicy,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    strategy: &StrategySpec,
    space: &ResponseSpace,
) -> Result<(LogitPolicy, Vec<TrajectoryRecord>)> {
    config.validate()?;
    strategy.validate()?;
    let mut theta = theta0.clone();
    let mut ledger = CostLedger::default();
    let mut stream = rng::stream(config.seed, rng::TRAIN);
    let mut trajectory = Vec::new();
    let mut adam = AdamState::new(theta.dim());
    let total_steps = match config.mode {
        TrainMode::Online => config.rounds * config.steps_per_round,
        TrainMode::Iterative => {
            let steps_per_epoch = prompts.len().div_ceil(config.batch_size);
            config.rounds * config.epochs * steps_per_epoch
        }
    };
    let mut step = 0usize;

    let record = |theta: &LogitPolicy,
                      step: usize,
                      ledger: &CostLedger,
                      trajectory: &mut Vec<TrajectoryRecord>| {
        let report = evaluate_j(theta, reference, config.beta, oracle, prompts, space);
        trajectory.push(TrajectoryRecord {
            step,
            expected_reward: report.expected_reward,
            kl: report.kl,
            j_value: report.j_value,
            sampling_cost: ledger.sampling(),
            annotation_cost: ledger.annotation(),
            strategy: strategy.kind.name().to_string(),
            seed: config.seed,
        });
    };

    let apply = |theta: &mut LogitPolicy, grad: &[f64], adam: &mut AdamState| match config
        .optimizer
    {
        OptimizerKind::Gd => {
            for (p, g) in theta.table_mut().iter_mut().zip(grad) {
                *p -= config.step_size * g;
            }
        }
        OptimizerKind::Adam => adam.step(theta.table_mut(), grad, config.step_size),
    };

    match config.mode {
        TrainMode::Online => {
            for _ in 0..total_steps {
                let batch = collect_batch(
                    &theta,
                    reference,
                    oracle,
                    prompts,
                    strategy,
                    space,
                    config.batch_size,
                    &mut stream,
                    &mut ledger,
                )?;
                let grad = loss_gradient(&theta, reference, config.beta, &batch)?;
                apply(&mut theta, &grad, &mut adam);
                step += 1;
                if step % config.eval_interval == 0 || step == total_steps {
                    record(&theta, step, &ledger, &mut trajectory);
                }
            }
        }
        TrainMode::Iterative => {
            for _ in 0..config.rounds {
                // Full prompt sweep: one labeled pair per prompt.
                let dataset = collect_sweep(
                    &theta,
                    reference,
                    oracle,
                    prompts,
                    strategy,
                    space,
                    &mut stream,
                    &mut ledger,
                )?;
                for _ in 0..config.epochs {
                    let order = shuffled_indices(dataset.len(), &mut stream);
                    for chunk in order.chunks(config.batch_size) {
                        let triples: Vec<PreferenceTriple> =
                            chunk.iter().map(|&i| dataset.triples[i].clone()).collect();
                        let batch = match &dataset.weights {
                            Some(w) => DpoBatch::weighted(
                                triples,
                                chunk.iter().map(|&i| w[i]).collect(),
                            )?,
                            None => DpoBatch::unweighted(triples),
                        };
                        let grad = loss_gradient(&theta, reference, config.beta, &batch)?;
                        apply(&mut theta, &grad, &mut adam);
                        step += 1;
                        if step % config.eval_interval == 0 || step == total_steps {
                            record(&theta, step, &ledger, &mut trajectory);
                        }
                    }
                }
            }
        }
    }
    Ok((theta, trajectory))
}

#[allow(clippy::too_many_arguments)]
fn collect_batch(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    strategy: &StrategySpec,
    space: &ResponseSpace,
    batch_size: usize,
    stream: &mut Stream,
    ledger: &mut CostLedger,
) -> Result<DpoBatch> {
    let weights = if strategy.kind == StrategyKind::TPilaf {
        Some(compute_weights(
            theta,
            reference,
            strategy.beta,
            prompts,
            space,
        )?)
    } else {
        None
    };
    let mut triples = Vec::with_capacity(batch_size);
    let mut ws = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let x = prompts.sample(stream);
        let (a, b) = sample_pair(strategy, theta, reference, x, stream, ledger, space)?;
        triples.push(oracle.label_pair(x, &a, &b, stream, ledger)?);
        if let Some(w) = &weights {
            ws.push(w.weight(x));
        }
    }
    match weights {
        Some(_) => DpoBatch::weighted(triples, ws),
        None => Ok(DpoBatch::unweighted(triples)),
    }
}

#[allow(clippy::too_many_arguments)]
fn collect_sweep(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    strategy: &StrategySpec,
    space: &ResponseSpace,
    stream: &mut Stream,
    ledger: &mut CostLedger,
) -> Result<DpoBatch> {
    let weights = if strategy.kind == StrategyKind::TPilaf {
        Some(compute_weights(
            theta,
            reference,
            strategy.beta,
            prompts,
            space,
        )?)
    } else {
        None
    };
    let mut triples = Vec::with_capacity(prompts.len());
    let mut ws = Vec::with_capacity(prompts.len());
    for x in 0..prompts.len() {
        let (a, b) = sample_pair(strategy, theta, reference, x, stream, ledger, space)?;
        triples.push(oracle.label_pair(x, &a, &b, stream, ledger)?);
        if let Some(w) = &weights {
            ws.push(w.weight(x));
        }
    }
    match weights {
        Some(_) => DpoBatch::weighted(triples, ws),
        None => Ok(DpoBatch::unweighted(triples)),
    }
}

fn shuffled_indices(n: usize, stream: &mut Stream) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = stream.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
