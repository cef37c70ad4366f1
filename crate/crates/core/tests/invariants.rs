//! Property tests for the structural invariants: normalization of every
//! distribution view under arbitrary finite logits, label symmetry, and
//! density symmetrization.

use proptest::prelude::*;

use preflab_core::lm::{
    joint_log_probs, joint_probs, kl_divergence, LogitPolicy, PromptSpace, ResponseSpace,
    VocabSpec,
};
use preflab_core::math::sigmoid;
use preflab_core::sampling::{
    pair_density, pilaf_pair_density, symmetrized, StrategyKind, StrategySpec,
};

fn arb_policy(
    vocab_size: usize,
    max_len: usize,
    n_prompts: usize,
) -> impl Strategy<Value = LogitPolicy> {
    let vocab = VocabSpec::new(vocab_size, max_len).unwrap();
    let d = n_prompts * vocab.contexts_per_prompt() * vocab.vocab_size();
    proptest::collection::vec(-8.0f64..8.0, d).prop_map(move |table| {
        LogitPolicy::from_table(vocab, n_prompts, table).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_probabilities_sum_to_one(policy in arb_policy(3, 3, 2)) {
        let space = ResponseSpace::enumerate(*policy.vocab());
        for x in 0..2 {
            let total: f64 = joint_probs(&policy, x, &space).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10, "mass {total}");
        }
    }

    #[test]
    fn log_prob_agrees_with_enumeration(policy in arb_policy(4, 2, 1)) {
        let space = ResponseSpace::enumerate(*policy.vocab());
        let logs = joint_log_probs(&policy, 0, &space);
        for (i, seq) in space.iter().enumerate() {
            let lp = policy.log_prob(0, seq).unwrap();
            prop_assert!((lp - logs[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_is_nonnegative(p in arb_policy(3, 2, 2), q in arb_policy(3, 2, 2)) {
        let space = ResponseSpace::enumerate(*p.vocab());
        let prompts = PromptSpace::uniform(2).unwrap();
        let kl = kl_divergence(&p, &q, &prompts, &space).unwrap();
        prop_assert!(kl >= -1e-12, "KL = {kl}");
    }

    #[test]
    fn bt_label_probabilities_are_complementary(ra in -30.0f64..30.0, rb in -30.0f64..30.0) {
        let p_ab = sigmoid(ra - rb);
        let p_ba = sigmoid(rb - ra);
        prop_assert!((p_ab + p_ba - 1.0).abs() < 1e-15);
        // Strictly interior while the gap stays below float saturation.
        if (ra - rb).abs() < 36.0 {
            prop_assert!(p_ab > 0.0 && p_ab < 1.0);
        }
    }

    #[test]
    fn pair_densities_are_normalized_distributions(
        theta in arb_policy(3, 2, 1),
        reference in arb_policy(3, 2, 1),
        beta in 0.05f64..1.5,
    ) {
        let space = ResponseSpace::enumerate(*theta.vocab());
        for kind in [StrategyKind::Vanilla, StrategyKind::Hybrid, StrategyKind::TPilaf] {
            let spec = StrategySpec::new(kind, beta).unwrap();
            let mu = pair_density(&spec, &theta, &reference, 0, &space).unwrap();
            let total: f64 = mu.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{kind:?} mass {total}");
            prop_assert!(mu.iter().all(|&v| v >= 0.0));
            // Symmetrization preserves mass and is order-invariant.
            let s = space.len();
            let mubar = symmetrized(&mu, s);
            for a in 0..s {
                for b in 0..s {
                    prop_assert!((mubar[a * s + b] - mubar[b * s + a]).abs() < 1e-18);
                }
            }
        }
        let mu = pilaf_pair_density(&theta, &reference, beta, 0, &space).unwrap();
        let total: f64 = mu.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "token-wise mass {total}");
    }
}
