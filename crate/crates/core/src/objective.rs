//! The oracle objective J, its exact gradient and Hessian, and the
//! asymptotic covariance matrices.
//!
//! `J(pi) = E_{x~rho, y~pi}[r*(x,y)] - beta KL(pi || pi_ref)`; the policy
//! maximizing it is the reward-tilted reference. With a realizable oracle
//! that maximizer is the designated optimum policy itself, which is what
//! lets the Hessian and covariance identities be checked exactly.
//!
//! The tabular softmax parameterization carries a gauge freedom: adding a
//! constant to all logits of one context leaves every probability
//! unchanged. Covariance matrices are therefore singular along the
//! per-context constant directions, and all identifiability-sensitive
//! comparisons first project onto the orthogonal complement (see
//! [`project_off_gauge`] and [`nongauge_basis`]).

use nalgebra::DMatrix;

use crate::lm::{joint_probs, kl_divergence, LogitPolicy, PromptSpace, ResponseSpace};
use crate::math::{sigmoid_prime, CompensatedSum};
use crate::reward::{implicit_reward_table, OracleReward};
use crate::sampling::{strategy_pair_weights, StrategySpec};
use crate::Result;

// ---------------------------------------------------------------------------
// J and its gradient
// ---------------------------------------------------------------------------

/// Decomposed value of the oracle objective at one policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub expected_reward: f64,
    pub kl: f64,
    /// `expected_reward - beta * kl`.
    pub j_value: f64,
    pub beta: f64,
}

/// Exact `J(theta) = E[r*] - beta KL(pi_theta || pi_ref)` by enumeration.
pub fn evaluate_j(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> ObjectiveReport {
    let expected_reward = oracle.expected_reward(theta, prompts);
    let kl = kl_divergence(theta, reference, prompts, space)
        .expect("policies share shape by construction");
    ObjectiveReport {
        expected_reward,
        kl,
        j_value: expected_reward - beta * kl,
        beta,
    }
}

/// Per-response reward gradients `grad r_theta(x, y) = beta grad log pi`,
/// dense, for every response in enumeration order.
pub fn reward_grad_table(
    theta: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
) -> Vec<Vec<f64>> {
    space
        .iter()
        .map(|seq| {
            let mut g = vec![0.0; theta.dim()];
            theta
                .accumulate_grad_log_prob(prompt, seq, beta, &mut g)
                .expect("enumerated sequences are valid");
            g
        })
        .collect()
}

/// Exact gradient of J in the symmetrized two-response form:
/// `(1/2beta) E_{x; a,b ~ pi x pi}[(dr* - dr)(grad r(a) - grad r(b))]`.
pub fn grad_j(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Vec<f64> {
    let s = space.len();
    let mut grad = vec![0.0; theta.dim()];
    for x in 0..prompts.len() {
        let pi = joint_probs(theta, x, space);
        let r_theta = implicit_reward_table(theta, reference, beta, x, space);
        let r_star = oracle.row(x);
        // Net coefficient per response from summing over its partner.
        let mut net = vec![0.0; s];
        for a in 0..s {
            for b in 0..s {
                let diff = (r_star[a] - r_star[b]) - (r_theta[a] - r_theta[b]);
                let coef = pi[a] * pi[b] * diff;
                net[a] += coef;
                net[b] -= coef;
            }
        }
        let scale = prompts.weight(x) / (2.0 * beta);
        for (i, seq) in space.iter().enumerate() {
            if net[i] != 0.0 {
                theta
                    .accumulate_grad_log_prob(x, seq, scale * net[i] * beta, &mut grad)
                    .expect("enumerated sequences are valid");
            }
        }
    }
    grad
}

/// The single-response form of the same gradient,
/// `(1/beta) E_{x, y}[(r* - r)(grad r(y) - E[grad r])]`, kept as an
/// independent route for cross-checking.
pub fn grad_j_single_form(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Vec<f64> {
    let mut grad = vec![0.0; theta.dim()];
    for x in 0..prompts.len() {
        let pi = joint_probs(theta, x, space);
        let r_theta = implicit_reward_table(theta, reference, beta, x, space);
        let r_star = oracle.row(x);
        // E[(r*-r)] under pi, to center the coefficient; combined with the
        // gauge-orthogonality of grad log pi this realizes the
        // (grad r - E grad r) factor without materializing the mean vector.
        let mean_diff: f64 = pi
            .iter()
            .zip(r_star.iter().zip(&r_theta))
            .map(|(p, (rs, rt))| p * (rs - rt))
            .sum();
        let scale = prompts.weight(x) / beta;
        for (i, seq) in space.iter().enumerate() {
            let coef = pi[i] * ((r_star[i] - r_theta[i]) - mean_diff);
            if coef != 0.0 {
                theta
                    .accumulate_grad_log_prob(x, seq, scale * coef * beta, &mut grad)
                    .expect("enumerated sequences are valid");
            }
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// Covariance matrices
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaForm {
    /// `E_x[Cov_{y ~ pi*}(grad r*)]` — the tilted-scheme shape.
    Simplified,
    /// `E[w(x) sigmoid'(dr*) g g^T]` over a strategy's symmetrized pair
    /// density, `g` the reward-gradient difference.
    General,
}

/// A computed covariance/information matrix with its provenance.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub sigma_star: DMatrix<f64>,
    pub form: SigmaForm,
    /// Inverse-style upper bound on the estimator covariance, modulo the
    /// unknown universal constant: the pseudo-inverse of `sigma_star` on
    /// the non-gauge subspace. Computed on demand.
    pub omega_bound: Option<DMatrix<f64>>,
}

impl CovarianceEstimate {
    /// Attach the pseudo-inverse bound, inverting only eigendirections
    /// with eigenvalue above `tol`.
    pub fn with_omega_bound(mut self, tol: f64) -> Self {
        let eig = self.sigma_star.clone().symmetric_eigen();
        let d = self.sigma_star.nrows();
        let mut pinv = DMatrix::zeros(d, d);
        for k in 0..d {
            let lambda = eig.eigenvalues[k];
            if lambda > tol {
                let v = eig.eigenvectors.column(k);
                pinv += v * v.transpose() / lambda;
            }
        }
        self.omega_bound = Some(pinv);
        self
    }
}

/// `Sigma* = E_x[Cov_{y ~ pi*}(grad r*(x, y))]` at the optimum policy.
pub fn sigma_star_simplified(
    theta_star: &LogitPolicy,
    beta: f64,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> CovarianceEstimate {
    let d = theta_star.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for x in 0..prompts.len() {
        let pi = joint_probs(theta_star, x, space);
        let grads = reward_grad_table(theta_star, beta, x, space);
        let mut mean = vec![0.0; d];
        for (p, g) in pi.iter().zip(&grads) {
            for i in 0..d {
                mean[i] += p * g[i];
            }
        }
        let w = prompts.weight(x);
        for (p, g) in pi.iter().zip(&grads) {
            for i in 0..d {
                let ci = g[i] - mean[i];
                if ci == 0.0 {
                    continue;
                }
                for j in 0..d {
                    sigma[(i, j)] += w * p * ci * (g[j] - mean[j]);
                }
            }
        }
    }
    CovarianceEstimate {
        sigma_star: sigma,
        form: SigmaForm::Simplified,
        omega_bound: None,
    }
}

/// General-form information matrix for any strategy with a closed-form
/// density: `E_{x,(a,b)~mubar}[w(x) sigmoid'(dr*) g g^T]` with
/// `g = grad r*(x,a) - grad r*(x,b)`, everything evaluated at the optimum.
#[allow(clippy::needless_range_loop)]
pub fn sigma_star_general(
    theta_star: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    spec: &StrategySpec,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<CovarianceEstimate> {
    let (mubar, weights) = strategy_pair_weights(spec, theta_star, reference, prompts, space)?;
    let d = theta_star.dim();
    let s = space.len();
    let mut sigma = DMatrix::zeros(d, d);
    for x in 0..prompts.len() {
        let grads = reward_grad_table(theta_star, beta, x, space);
        let r_star = implicit_reward_table(theta_star, reference, beta, x, space);
        let wx = prompts.weight(x) * weights.weight(x);
        let mut g = vec![0.0; d];
        for a in 0..s {
            for b in 0..s {
                let m = mubar[x][a * s + b];
                if m == 0.0 || a == b {
                    continue; // identical pairs have g = 0
                }
                let coef = wx * m * sigmoid_prime(r_star[a] - r_star[b]);
                for i in 0..d {
                    g[i] = grads[a][i] - grads[b][i];
                }
                for i in 0..d {
                    if g[i] == 0.0 {
                        continue;
                    }
                    let gi = coef * g[i];
                    for j in 0..d {
                        sigma[(i, j)] += gi * g[j];
                    }
                }
            }
        }
    }
    Ok(CovarianceEstimate {
        sigma_star: sigma,
        form: SigmaForm::General,
        omega_bound: None,
    })
}

/// Exact Hessian of J at the optimum: `-(1/beta) Sigma*_simplified`.
pub fn hess_j_at_star(
    theta_star: &LogitPolicy,
    beta: f64,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> DMatrix<f64> {
    let sigma = sigma_star_simplified(theta_star, beta, prompts, space);
    -sigma.sigma_star / beta
}

// ---------------------------------------------------------------------------
// Gauge handling
// ---------------------------------------------------------------------------

/// Remove the per-context constant component of a parameter-space vector:
/// for each context block, subtract the block mean. The result is
/// orthogonal to every gauge direction.
pub fn project_off_gauge(v: &mut [f64], vocab_size: usize) {
    for block in v.chunks_mut(vocab_size) {
        let mean = block.iter().sum::<f64>() / vocab_size as f64;
        for e in block {
            *e -= mean;
        }
    }
}

/// Dimension of the gauge subspace (one direction per context).
pub fn gauge_dim(param_dim: usize, vocab_size: usize) -> usize {
    param_dim / vocab_size
}

/// Effective identifiable dimension: `d - #contexts`.
pub fn effective_dim(param_dim: usize, vocab_size: usize) -> usize {
    param_dim - gauge_dim(param_dim, vocab_size)
}

/// Orthonormal basis of the non-gauge subspace, as a `d x d_eff` matrix.
/// Within each context block the columns are the Helmert contrasts, which
/// are orthonormal and orthogonal to the block's constant vector.
pub fn nongauge_basis(param_dim: usize, vocab_size: usize) -> DMatrix<f64> {
    let n_ctx = gauge_dim(param_dim, vocab_size);
    let d_eff = effective_dim(param_dim, vocab_size);
    let mut basis = DMatrix::zeros(param_dim, d_eff);
    let mut col = 0;
    for c in 0..n_ctx {
        let base = c * vocab_size;
        for k in 1..vocab_size {
            // Helmert contrast: (1,...,1,-k,0,...)/sqrt(k(k+1)) over the block.
            let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
            for j in 0..k {
                basis[(base + j, col)] = 1.0 / norm;
            }
            basis[(base + k, col)] = -(k as f64) / norm;
            col += 1;
        }
    }
    basis
}

/// Restrict a symmetric matrix to the non-gauge subspace: `B^T M B`.
pub fn restrict_to_nongauge(m: &DMatrix<f64>, vocab_size: usize) -> DMatrix<f64> {
    let basis = nongauge_basis(m.nrows(), vocab_size);
    basis.transpose() * m * basis
}

/// Maximum absolute asymmetry `max_ij |M_ij - M_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Write a matrix as a plain-text numeric grid, one row per line.
pub fn write_matrix_text(m: &DMatrix<f64>, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Prompt-averaged mean-square implicit-reward gap between oracle and
/// policy under two independent policy draws,
/// `E_{x; a,b ~ pi x pi}[((dr* - dr))^2]`. This is the second-order factor
/// in the gradient-alignment bound.
pub fn mean_square_pair_gap(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    oracle: &OracleReward,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> f64 {
    let s = space.len();
    let mut acc = CompensatedSum::new();
    for x in 0..prompts.len() {
        let pi = joint_probs(theta, x, space);
        let r_theta = implicit_reward_table(theta, reference, beta, x, space);
        let r_star = oracle.row(x);
        for a in 0..s {
            for b in 0..s {
                let gap = (r_star[a] - r_star[b]) - (r_theta[a] - r_theta[b]);
                acc.add(prompts.weight(x) * pi[a] * pi[b] * gap * gap);
            }
        }
    }
    acc.value()
}
