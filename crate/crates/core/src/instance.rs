//! Seeded construction of complete toy instances.
//!
//! An instance bundles everything a run or a harness needs: the response
//! space, the prompt distribution, a reference policy, a designated optimum
//! policy with its realizable oracle (or a table oracle loaded from disk),
//! and an initial policy. All randomness comes from fixed streams of the
//! instance seed, so an [`InstanceParams`] value fully determines the
//! instance.

use std::path::PathBuf;

use crate::lm::{LogitPolicy, PromptSpace, ResponseSpace, VocabSpec};
use crate::reward::OracleReward;
use crate::rng;
use crate::{Error, Result};

/// How the initial policy is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum Theta0Spec {
    /// Start at the reference policy.
    Reference,
    /// Reference plus seeded Gaussian logit noise of the given scale.
    Seeded { scale: f64 },
}

/// How the oracle is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleSpec {
    /// Draw an optimum policy at `scale` around the reference and derive
    /// the oracle from it. Keeps the optimum for theorem checks.
    Realizable { scale: f64 },
    /// Load an arbitrary reward table from a text file.
    TableFile { path: PathBuf },
}

#[derive(Clone, Debug)]
pub struct InstanceParams {
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_prompts: usize,
    /// Defaults to uniform when absent.
    pub prompt_weights: Option<Vec<f64>>,
    pub beta: f64,
    pub ref_scale: f64,
    pub oracle: OracleSpec,
    pub theta0: Theta0Spec,
    pub seed: u64,
}

impl InstanceParams {
    /// The default verification instance: 3 tokens, length 2, two prompts.
    pub fn default_verification(seed: u64, beta: f64) -> Self {
        Self {
            vocab_size: 3,
            max_len: 2,
            n_prompts: 2,
            prompt_weights: None,
            beta,
            ref_scale: 0.5,
            oracle: OracleSpec::Realizable { scale: 0.8 },
            theta0: Theta0Spec::Seeded { scale: 0.8 },
            seed,
        }
    }
}

/// A fully built toy instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub vocab: VocabSpec,
    pub space: ResponseSpace,
    pub prompts: PromptSpace,
    pub reference: LogitPolicy,
    pub theta0: LogitPolicy,
    pub oracle: OracleReward,
    pub beta: f64,
    pub seed: u64,
}

impl Instance {
    pub fn build(params: &InstanceParams) -> Result<Self> {
        if !(params.beta > 0.0) {
            return Err(Error::InvalidSpec("beta must be > 0".into()));
        }
        let vocab = VocabSpec::new(params.vocab_size, params.max_len)?;
        let space = ResponseSpace::enumerate(vocab);
        let prompts = match &params.prompt_weights {
            Some(w) => {
                if w.len() != params.n_prompts {
                    return Err(Error::InvalidSpec(
                        "prompt_weights length must equal prompt count".into(),
                    ));
                }
                PromptSpace::new(w.clone())?
            }
            None => PromptSpace::uniform(params.n_prompts)?,
        };
        let mut ref_rng = rng::stream(params.seed, rng::INSTANCE_REF);
        let reference =
            LogitPolicy::seeded(vocab, params.n_prompts, params.ref_scale, &mut ref_rng);

        let oracle = match &params.oracle {
            OracleSpec::Realizable { scale } => {
                let mut star_rng = rng::stream(params.seed, rng::INSTANCE_STAR);
                let noise = LogitPolicy::seeded(vocab, params.n_prompts, *scale, &mut star_rng);
                let theta_star = reference.add_scaled(noise.table(), 1.0);
                OracleReward::realizable(theta_star, &reference, params.beta, space.clone())?
            }
            OracleSpec::TableFile { path } => {
                OracleReward::read_table(path, space.clone(), params.n_prompts)?
            }
        };

        let theta0 = match &params.theta0 {
            Theta0Spec::Reference => reference.clone(),
            Theta0Spec::Seeded { scale } => {
                let mut t0_rng = rng::stream(params.seed, rng::INSTANCE_THETA0);
                let noise = LogitPolicy::seeded(vocab, params.n_prompts, *scale, &mut t0_rng);
                reference.add_scaled(noise.table(), 1.0)
            }
        };

        Ok(Self {
            vocab,
            space,
            prompts,
            reference,
            theta0,
            oracle,
            beta: params.beta,
            seed: params.seed,
        })
    }

    /// The optimum policy; requires a realizable oracle.
    pub fn theta_star(&self) -> Result<&LogitPolicy> {
        self.oracle.theta_star().ok_or(Error::NonRealizableOracle)
    }

    /// A unit-norm probe direction drawn from the instance probe stream.
    pub fn probe_direction(&self) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rng::stream(self.seed, rng::INSTANCE_PROBE);
        let mut dir: Vec<f64> = (0..self.theta0.dim())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = crate::math::l2_norm(&dir);
        for v in &mut dir {
            *v /= norm;
        }
        dir
    }
}
