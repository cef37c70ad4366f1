//! Cross-module identities that tie the covariance machinery to the
//! sampling densities away from the optimum, where the bounds are
//! inequalities rather than equalities.

use nalgebra::DMatrix;
use preflab_core::instance::{Instance, InstanceParams};
use preflab_core::math::{sigmoid_prime, l2_norm};
use preflab_core::objective::{
    min_eigenvalue, reward_grad_table, restrict_to_nongauge,
};
use preflab_core::reward::implicit_reward_table;
use preflab_core::sampling::{
    compute_weights, pair_density, symmetrized, StrategyKind, StrategySpec,
};
use preflab_core::verify::covariance_domination_factor;
use preflab_core::verify::run_replication_study;
use preflab_core::lm::joint_probs;

/// Away from the optimum, the tilted-scheme information matrix dominates
/// `(2 C Zbar)^{-1} E[g g^T]` where C is the measured worst-case ratio of
/// label variances between the policy reward and the oracle reward. The
/// matrix inequality is checked on the non-gauge subspace.
#[test]
fn tilted_information_dominates_vanilla_structure() {
    for seed in 0..5 {
        let inst = Instance::build(&InstanceParams::default_verification(seed, 0.3)).unwrap();
        let theta = &inst.theta0; // a policy away from the optimum
        let beta = inst.beta;
        let theta_star = inst.theta_star().unwrap();
        let s = inst.space.len();
        let d = theta.dim();
        let spec = StrategySpec::new(StrategyKind::TPilaf, beta).unwrap();
        let weights = compute_weights(theta, &inst.reference, beta, &inst.prompts, &inst.space)
            .unwrap();

        // Information matrix of the tilted scheme at theta: density and
        // weights at theta, gradient differences and label variance at the
        // oracle parameters.
        let mut info = DMatrix::<f64>::zeros(d, d);
        // Structure term E_{pi x pi}[g g^T] under theta's product density.
        let mut structure = DMatrix::<f64>::zeros(d, d);
        // Measured variance-ratio constant over all pairs and prompts.
        let mut c_measured = 1.0f64;
        for x in 0..inst.prompts.len() {
            let mu = pair_density(&spec, theta, &inst.reference, x, &inst.space).unwrap();
            let mubar = symmetrized(&mu, s);
            let pi = joint_probs(theta, x, &inst.space);
            let grads_star = reward_grad_table(theta_star, beta, x, &inst.space);
            let r_star = inst.oracle.row(x);
            let r_theta = implicit_reward_table(theta, &inst.reference, beta, x, &inst.space);
            let rho_w = inst.prompts.weight(x) * weights.weight(x);
            let rho = inst.prompts.weight(x);
            for a in 0..s {
                for b in 0..s {
                    if a == b {
                        continue;
                    }
                    let var_star = sigmoid_prime(r_star[a] - r_star[b]);
                    let var_theta = sigmoid_prime(r_theta[a] - r_theta[b]);
                    c_measured = c_measured.max(var_theta / var_star);
                    let g: Vec<f64> = grads_star[a]
                        .iter()
                        .zip(&grads_star[b])
                        .map(|(u, v)| u - v)
                        .collect();
                    let coef_info = rho_w * mubar[a * s + b] * var_star;
                    let coef_structure = rho * pi[a] * pi[b];
                    for i in 0..d {
                        if g[i] == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            info[(i, j)] += coef_info * g[i] * g[j];
                            structure[(i, j)] += coef_structure * g[i] * g[j];
                        }
                    }
                }
            }
        }
        let lower = structure / (2.0 * c_measured * weights.zbar);
        let diff = restrict_to_nongauge(&(info - lower), inst.vocab.vocab_size());
        let min_eig = min_eigenvalue(&diff);
        assert!(
            min_eig > -1e-10,
            "seed {seed}: matrix inequality violated, min eig {min_eig}"
        );
    }
}

/// The measured covariance domination factor of a replication study is a
/// finite positive scalar, and the fitted estimates are genuinely spread
/// (the study is not degenerate).
#[test]
fn covariance_domination_factor_is_finite() {
    let params = InstanceParams {
        oracle: preflab_core::instance::OracleSpec::Realizable { scale: 0.4 },
        ..InstanceParams::default_verification(0, 0.5)
    };
    let inst = Instance::build(&params).unwrap();
    let theta_star = inst.theta_star().unwrap().clone();
    let strategy = StrategySpec::new(StrategyKind::TPilaf, inst.beta).unwrap();
    let study = run_replication_study(
        &theta_star,
        &inst.reference,
        inst.beta,
        &strategy,
        &inst.oracle,
        &inst.prompts,
        &inst.space,
        1000,
        20,
        4242,
    )
    .unwrap();
    let sigma = preflab_core::objective::sigma_star_general(
        &theta_star,
        &inst.reference,
        inst.beta,
        &strategy,
        &inst.prompts,
        &inst.space,
    )
    .unwrap();
    let c = covariance_domination_factor(&study, &theta_star, &sigma.sigma_star);
    assert!(c.is_finite() && c > 0.0, "factor {c}");
    assert!(study.proj_norms.iter().all(|&n| n > 0.0));
    let spread = study
        .proj_norms
        .iter()
        .map(|n| (n - study.mean_proj_norm()).abs())
        .fold(0.0f64, f64::max);
    assert!(spread > 0.0);
    let _ = l2_norm(&study.theta_hats[0]);
}
