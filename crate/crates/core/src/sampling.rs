//! Response-pair generation strategies and their exact pair densities.
//!
//! Five strategies produce candidate pairs for preference labeling:
//!
//! - `Vanilla` — two i.i.d. draws from the current policy.
//! - `BestOfN` — n draws from the policy; the pair is the argmax/argmin
//!   under the implicit reward (ties broken by lowest draw index).
//! - `Hybrid` — one draw from the policy, one from the reference.
//! - `Pilaf` — with probability 1/2 two policy draws, otherwise one draw
//!   from each token-wise tilted policy obtained by interpolating and
//!   extrapolating the logits of the policy and the reference.
//! - `TPilaf` — the sequence-level scheme: a Bernoulli(p0) switch between
//!   two policy draws and a draw from each exactly-tilted policy
//!   `pi exp(+-r)/Z`, with partition functions computed by enumeration.
//!
//! Cost accounting: generating one full sequence from one logit table is
//! one sampling unit; a tilted generation reads two tables and costs two.
//! Labeling a pair costs two annotation units (the oracle reads both
//! responses). Expected per-pair sampling cost is therefore 2 for Vanilla
//! and Hybrid, n for BestOfN, and 3 for Pilaf's half-half mixture.

use rand::Rng;

use crate::lm::{
    joint_probs, sample_categorical, LogitPolicy, PromptSpace, ResponseSpace, Token, TokenSeq, EOS,
};
use crate::math::log_sum_exp;
use crate::reward::{implicit_reward, implicit_reward_table};
use crate::rng::Stream;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Strategy configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Vanilla,
    BestOfN,
    Hybrid,
    Pilaf,
    TPilaf,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Vanilla => "vanilla",
            StrategyKind::BestOfN => "best_of_n",
            StrategyKind::Hybrid => "hybrid",
            StrategyKind::Pilaf => "pilaf",
            StrategyKind::TPilaf => "tpilaf",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "vanilla" => Ok(StrategyKind::Vanilla),
            "best_of_n" | "bestofn" => Ok(StrategyKind::BestOfN),
            "hybrid" => Ok(StrategyKind::Hybrid),
            "pilaf" => Ok(StrategyKind::Pilaf),
            "tpilaf" | "t-pilaf" => Ok(StrategyKind::TPilaf),
            other => Err(Error::InvalidSpec(format!("unknown strategy '{other}'"))),
        }
    }
}

/// A pair-generation scheme plus its hyperparameters. `beta` is shared with
/// the training objective; the tilt strength and the KL regularizer are one
/// parameter by construction.
#[derive(Clone, Copy, Debug)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub beta: f64,
    /// Candidate count for BestOfN.
    pub n_candidates: usize,
    /// TPilaf computes its partition functions by exact enumeration.
    pub exact_partitions: bool,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, beta: f64) -> Result<Self> {
        let spec = Self {
            kind,
            beta,
            n_candidates: 8,
            exact_partitions: kind == StrategyKind::TPilaf,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_candidates(mut self, n: usize) -> Result<Self> {
        self.n_candidates = n;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) && self.kind != StrategyKind::Pilaf {
            return Err(Error::InvalidSpec(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidSpec(format!("bad beta {}", self.beta)));
        }
        if self.kind == StrategyKind::BestOfN && self.n_candidates < 2 {
            return Err(Error::InvalidSpec(
                "best-of-n needs at least 2 candidates".into(),
            ));
        }
        if self.kind == StrategyKind::TPilaf && !self.exact_partitions {
            return Err(Error::InvalidSpec(
                "tpilaf requires exact partition functions".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cost metering
// ---------------------------------------------------------------------------

/// Cumulative sampling (full-sequence generations) and annotation
/// (oracle-read units) costs of a run. Owned by a single run; strategies
/// and the labeler are the only writers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostLedger {
    sampling: u64,
    annotation: u64,
}

impl CostLedger {
    pub fn sampling(&self) -> u64 {
        self.sampling
    }

    pub fn annotation(&self) -> u64 {
        self.annotation
    }

    pub fn add_sampling(&mut self, units: u64) {
        self.sampling += units;
    }

    pub fn add_annotation(&mut self, units: u64) {
        self.annotation += units;
    }
}

// ---------------------------------------------------------------------------
// Partition functions and weights
// ---------------------------------------------------------------------------

/// Exact partition values of the tilted policies for one prompt.
#[derive(Clone, Copy, Debug)]
pub struct PartitionValues {
    /// `Z+ = sum_y pi(y|x) exp(+r(x,y))`.
    pub z_plus: f64,
    /// `Z- = sum_y pi(y|x) exp(-r(x,y))`.
    pub z_minus: f64,
    /// Bernoulli probability `p0 = Z+Z- / (1 + Z+Z-)`.
    pub p0: f64,
    /// The product `Z+ Z-`, this prompt's contribution to the normalizer.
    pub zbar_contrib: f64,
}

/// Enumerate the tilted-policy partition functions for one prompt.
/// Fails if the implicit reward is large enough to overflow `exp`.
pub fn compute_partitions(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
) -> Result<PartitionValues> {
    let probs = joint_probs(theta, prompt, space);
    let rewards = implicit_reward_table(theta, reference, beta, prompt, space);
    let max_abs = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if max_abs > 700.0 {
        return Err(Error::PartitionOverflow {
            max_abs_reward: max_abs,
        });
    }
    let z_plus: f64 = probs
        .iter()
        .zip(&rewards)
        .map(|(p, r)| p * r.exp())
        .sum();
    let z_minus: f64 = probs
        .iter()
        .zip(&rewards)
        .map(|(p, r)| p * (-r).exp())
        .sum();
    let prod = z_plus * z_minus;
    Ok(PartitionValues {
        z_plus,
        z_minus,
        p0: prod / (1.0 + prod),
        zbar_contrib: prod,
    })
}

/// Per-prompt loss weights `w(x) = (1 + Z+Z-)/Zbar` with the normalizer
/// `Zbar = 1 + E_{x~rho}[Z+Z-]`.
#[derive(Clone, Debug)]
pub struct WeightFn {
    pub weights: Vec<f64>,
    pub zbar: f64,
}

impl WeightFn {
    /// Unit weights: the standard (unweighted) loss.
    pub fn ones(n_prompts: usize) -> Self {
        Self {
            weights: vec![1.0; n_prompts],
            zbar: 1.0,
        }
    }

    pub fn weight(&self, prompt: usize) -> f64 {
        self.weights[prompt]
    }
}

/// Weights for the tilted sampling scheme, by exact enumeration.
pub fn compute_weights(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<WeightFn> {
    let mut contribs = Vec::with_capacity(prompts.len());
    for x in 0..prompts.len() {
        contribs.push(compute_partitions(theta, reference, beta, x, space)?.zbar_contrib);
    }
    let zbar = 1.0
        + contribs
            .iter()
            .zip(prompts.weights())
            .map(|(c, w)| c * w)
            .sum::<f64>();
    let weights = contribs.iter().map(|c| (1.0 + c) / zbar).collect();
    Ok(WeightFn { weights, zbar })
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Two i.i.d. draws from the policy. Ledger: +2 sampling.
pub fn sample_vanilla(
    theta: &LogitPolicy,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
) -> (TokenSeq, TokenSeq) {
    let a = theta.sample_response(prompt, rng);
    let b = theta.sample_response(prompt, rng);
    ledger.add_sampling(2);
    (a, b)
}

/// n draws from the policy; returns (argmax, argmin) under the implicit
/// reward, ties broken by lowest draw index. Ledger: +n sampling.
pub fn sample_best_of_n(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    n: usize,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
) -> Result<(TokenSeq, TokenSeq)> {
    if n < 2 {
        return Err(Error::InvalidSpec("best-of-n needs n >= 2".into()));
    }
    let mut best = 0usize;
    let mut worst = 0usize;
    let mut best_r = f64::NEG_INFINITY;
    let mut worst_r = f64::INFINITY;
    let mut draws = Vec::with_capacity(n);
    for i in 0..n {
        let y = theta.sample_response(prompt, rng);
        let r = implicit_reward(theta, reference, beta, prompt, &y)?;
        if r > best_r {
            best_r = r;
            best = i;
        }
        if r < worst_r {
            worst_r = r;
            worst = i;
        }
        draws.push(y);
    }
    ledger.add_sampling(n as u64);
    Ok((draws[best].clone(), draws[worst].clone()))
}

/// One draw from the policy and one from the reference. Ledger: +2 sampling.
pub fn sample_hybrid(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
) -> (TokenSeq, TokenSeq) {
    let a = theta.sample_response(prompt, rng);
    let b = reference.sample_response(prompt, rng);
    ledger.add_sampling(2);
    (a, b)
}

/// Tilt direction of the interpolated token distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TiltSign {
    Plus,
    Minus,
}

/// Log version of [`pilaf_token_dist`]: per-token log probabilities of the
/// interpolated softmax. Kept separate so joint probabilities can be
/// assembled by summing logs, the same route [`crate::lm::joint_probs`]
/// takes, which makes the beta = 0 degeneracy to the base policy exact.
pub fn pilaf_token_log_dist(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    prefix: &[Token],
    sign: TiltSign,
) -> Result<Vec<f64>> {
    let ctx_t = theta.context_index(prompt, prefix)?;
    let ctx_r = reference.context_index(prompt, prefix)?;
    let ht = theta.logits(ctx_t);
    let hr = reference.logits(ctx_r);
    let mixed: Vec<f64> = match sign {
        TiltSign::Plus => ht
            .iter()
            .zip(hr)
            .map(|(t, r)| (1.0 + beta) * t - beta * r)
            .collect(),
        TiltSign::Minus => ht
            .iter()
            .zip(hr)
            .map(|(t, r)| (1.0 - beta) * t + beta * r)
            .collect(),
    };
    let lse = log_sum_exp(&mixed);
    Ok(mixed.iter().map(|h| h - lse).collect())
}

/// Token-wise tilted next-token distribution at a prefix context:
/// `softmax((1+beta) h_theta - beta h_ref)` for [`TiltSign::Plus`] and
/// `softmax((1-beta) h_theta + beta h_ref)` for [`TiltSign::Minus`],
/// computed with max subtraction.
pub fn pilaf_token_dist(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    prefix: &[Token],
    sign: TiltSign,
) -> Result<Vec<f64>> {
    Ok(pilaf_token_log_dist(theta, reference, beta, prompt, prefix, sign)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Autoregressive draw from a token-wise tilted policy. Touches both logit
/// tables, so the caller meters it at two sampling units.
fn sample_tokenwise_tilted(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    sign: TiltSign,
    rng: &mut Stream,
) -> TokenSeq {
    let vocab = *theta.vocab();
    let mut prefix: Vec<Token> = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    loop {
        let p = pilaf_token_dist(theta, reference, beta, prompt, &prefix, sign)
            .expect("prefix stays within max_len by construction");
        let t = sample_categorical(&p, rng);
        tokens.push(t);
        if t == EOS || tokens.len() == vocab.max_len() {
            break;
        }
        prefix.push(t);
    }
    TokenSeq::new(tokens, &vocab).expect("sampled sequence is valid by construction")
}

/// Practical tilted sampling: a fair-coin mixture of two policy draws and a
/// token-wise tilted pair. Ledger: +2 on the policy branch, +4 on the
/// tilted branch (each tilted generation reads two tables); 3 expected.
pub fn sample_pilaf(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
) -> (TokenSeq, TokenSeq) {
    let coin: f64 = rng.random();
    if coin < 0.5 {
        sample_vanilla(theta, prompt, rng, ledger)
    } else {
        let a = sample_tokenwise_tilted(theta, reference, beta, prompt, TiltSign::Plus, rng);
        let b = sample_tokenwise_tilted(theta, reference, beta, prompt, TiltSign::Minus, rng);
        ledger.add_sampling(4);
        (a, b)
    }
}

/// Sequence-level tilted sampling with exact partitions: draw
/// `xi ~ Bernoulli(p0)`; on `xi = 1` draw the pair from the exactly tilted
/// policies by inverse CDF over the enumerated space, otherwise two policy
/// draws. Metered like the practical scheme: 2 units on the policy branch,
/// 4 on the tilted branch.
#[allow(clippy::too_many_arguments)]
pub fn sample_tpilaf(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
    parts: &PartitionValues,
    space: &ResponseSpace,
) -> (TokenSeq, TokenSeq) {
    let coin: f64 = rng.random();
    if coin < parts.p0 {
        let probs = joint_probs(theta, prompt, space);
        let rewards = implicit_reward_table(theta, reference, beta, prompt, space);
        let plus: Vec<f64> = probs
            .iter()
            .zip(&rewards)
            .map(|(p, r)| p * r.exp() / parts.z_plus)
            .collect();
        let minus: Vec<f64> = probs
            .iter()
            .zip(&rewards)
            .map(|(p, r)| p * (-r).exp() / parts.z_minus)
            .collect();
        let a = space.get(sample_categorical(&plus, rng)).clone();
        let b = space.get(sample_categorical(&minus, rng)).clone();
        ledger.add_sampling(4);
        (a, b)
    } else {
        sample_vanilla(theta, prompt, rng, ledger)
    }
}

/// Draw one candidate pair according to a strategy spec.
pub fn sample_pair(
    spec: &StrategySpec,
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    prompt: usize,
    rng: &mut Stream,
    ledger: &mut CostLedger,
    space: &ResponseSpace,
) -> Result<(TokenSeq, TokenSeq)> {
    match spec.kind {
        StrategyKind::Vanilla => Ok(sample_vanilla(theta, prompt, rng, ledger)),
        StrategyKind::BestOfN => sample_best_of_n(
            theta,
            reference,
            spec.beta,
            spec.n_candidates,
            prompt,
            rng,
            ledger,
        ),
        StrategyKind::Hybrid => Ok(sample_hybrid(theta, reference, prompt, rng, ledger)),
        StrategyKind::Pilaf => Ok(sample_pilaf(
            theta, reference, spec.beta, prompt, rng, ledger,
        )),
        StrategyKind::TPilaf => {
            let parts = compute_partitions(theta, reference, spec.beta, prompt, space)?;
            Ok(sample_tpilaf(
                theta, reference, spec.beta, prompt, rng, ledger, &parts, space,
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Exact pair densities
// ---------------------------------------------------------------------------

/// Sequence-level tilted distribution `pi(y|x) exp(+-r(x,y)) / Z` over the
/// enumerated space.
pub fn tilted_joint(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
    sign: TiltSign,
) -> Result<Vec<f64>> {
    let parts = compute_partitions(theta, reference, beta, prompt, space)?;
    let probs = joint_probs(theta, prompt, space);
    let rewards = implicit_reward_table(theta, reference, beta, prompt, space);
    Ok(match sign {
        TiltSign::Plus => probs
            .iter()
            .zip(&rewards)
            .map(|(p, r)| p * r.exp() / parts.z_plus)
            .collect(),
        TiltSign::Minus => probs
            .iter()
            .zip(&rewards)
            .map(|(p, r)| p * (-r).exp() / parts.z_minus)
            .collect(),
    })
}

/// Joint distribution of the token-wise tilted policy over the enumerated
/// space (the product of per-step interpolated softmax factors).
pub fn tokenwise_tilted_joint(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
    sign: TiltSign,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(space.len());
    for seq in space.iter() {
        let mut prefix: Vec<Token> = Vec::new();
        let mut lp = 0.0;
        for &t in seq.tokens() {
            let dist = pilaf_token_log_dist(theta, reference, beta, prompt, &prefix, sign)?;
            lp += dist[t];
            if t != EOS {
                prefix.push(t);
            }
        }
        out.push(lp.exp());
    }
    Ok(out)
}

/// Exact ordered-pair density `mu(ya, yb | x)` over the enumerated space,
/// row-major (`mu[a * len + b]`), for strategies that have a closed form:
/// Vanilla, Hybrid, and TPilaf. BestOfN and the token-wise practical scheme
/// are rejected.
pub fn pair_density(
    spec: &StrategySpec,
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    prompt: usize,
    space: &ResponseSpace,
) -> Result<Vec<f64>> {
    let s = space.len();
    match spec.kind {
        StrategyKind::Vanilla => {
            let p = joint_probs(theta, prompt, space);
            let mut mu = vec![0.0; s * s];
            for a in 0..s {
                for b in 0..s {
                    mu[a * s + b] = p[a] * p[b];
                }
            }
            Ok(mu)
        }
        StrategyKind::Hybrid => {
            let p = joint_probs(theta, prompt, space);
            let q = joint_probs(reference, prompt, space);
            let mut mu = vec![0.0; s * s];
            for a in 0..s {
                for b in 0..s {
                    mu[a * s + b] = p[a] * q[b];
                }
            }
            Ok(mu)
        }
        StrategyKind::TPilaf => {
            let parts = compute_partitions(theta, reference, spec.beta, prompt, space)?;
            let p = joint_probs(theta, prompt, space);
            let plus = tilted_joint(theta, reference, spec.beta, prompt, space, TiltSign::Plus)?;
            let minus =
                tilted_joint(theta, reference, spec.beta, prompt, space, TiltSign::Minus)?;
            let mut mu = vec![0.0; s * s];
            for a in 0..s {
                for b in 0..s {
                    mu[a * s + b] =
                        (1.0 - parts.p0) * p[a] * p[b] + parts.p0 * plus[a] * minus[b];
                }
            }
            Ok(mu)
        }
        StrategyKind::BestOfN | StrategyKind::Pilaf => Err(Error::UnsupportedStrategy(spec.kind)),
    }
}

/// Exact pair density of the practical token-wise scheme,
/// `1/2 pi x pi + 1/2 tilde-pi+ x tilde-pi-`. Kept separate from
/// [`pair_density`] because the population-loss machinery treats the
/// token-wise scheme as sampling-only; this density exists for diagnostics
/// (degeneracy checks, the measured gap to the sequence-level tilt).
pub fn pilaf_pair_density(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
) -> Result<Vec<f64>> {
    let s = space.len();
    let p = joint_probs(theta, prompt, space);
    let plus = tokenwise_tilted_joint(theta, reference, beta, prompt, space, TiltSign::Plus)?;
    let minus = tokenwise_tilted_joint(theta, reference, beta, prompt, space, TiltSign::Minus)?;
    let mut mu = vec![0.0; s * s];
    for a in 0..s {
        for b in 0..s {
            mu[a * s + b] = 0.5 * p[a] * p[b] + 0.5 * plus[a] * minus[b];
        }
    }
    Ok(mu)
}

/// Measured total-variation gap between the sequence-level tilted
/// distribution and its token-wise approximation, per sign, for one
/// prompt. The token-wise rule is exact only when the policy/reward
/// correspondence holds at every truncation, so this gap is reported, not
/// bounded.
pub fn tokenwise_tilt_gap(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
) -> Result<(f64, f64)> {
    let plus = tv_distance(
        &tilted_joint(theta, reference, beta, prompt, space, TiltSign::Plus)?,
        &tokenwise_tilted_joint(theta, reference, beta, prompt, space, TiltSign::Plus)?,
    );
    let minus = tv_distance(
        &tilted_joint(theta, reference, beta, prompt, space, TiltSign::Minus)?,
        &tokenwise_tilted_joint(theta, reference, beta, prompt, space, TiltSign::Minus)?,
    );
    Ok((plus, minus))
}

/// Symmetrized per-prompt pair densities of a strategy together with its
/// loss weights: the tilted strategy carries its enumeration weights, all
/// others weight uniformly. Shared by the population-loss and covariance
/// machinery.
pub fn strategy_pair_weights(
    spec: &StrategySpec,
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<(Vec<Vec<f64>>, WeightFn)> {
    let s = space.len();
    let mut mubar = Vec::with_capacity(prompts.len());
    for x in 0..prompts.len() {
        let mu = pair_density(spec, theta, reference, x, space)?;
        mubar.push(symmetrized(&mu, s));
    }
    let weights = if spec.kind == StrategyKind::TPilaf {
        compute_weights(theta, reference, spec.beta, prompts, space)?
    } else {
        WeightFn::ones(prompts.len())
    };
    Ok((mubar, weights))
}

/// Order-symmetrized pair density `mubar(a,b) = (mu(a,b) + mu(b,a)) / 2`.
pub fn symmetrized(mu: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * s];
    for a in 0..s {
        for b in 0..s {
            out[a * s + b] = 0.5 * (mu[a * s + b] + mu[b * s + a]);
        }
    }
    out
}

/// Total-variation distance between two densities on the same finite space.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
