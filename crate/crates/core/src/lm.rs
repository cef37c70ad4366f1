//! Token spaces and tabular autoregressive softmax policies.
//!
//! A response is a token sequence over a vocabulary of `vocab_size` tokens
//! in which token 0 is end-of-sequence. Sequences shorter than `max_len`
//! must end in EOS; length-`max_len` sequences terminate unconditionally.
//! This makes the response space finite, so joint probabilities, KL
//! divergences and all downstream expectations can be enumerated exactly.
//!
//! A [`LogitPolicy`] stores one logit vector per (prompt, token-prefix)
//! context; the flat concatenation of those vectors is the parameter vector
//! θ used throughout the crate. Per-context probabilities are softmax with
//! max subtraction, so extrapolated logit combinations stay finite.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::math::{log_sum_exp, CompensatedSum};
use crate::rng::Stream;
use crate::{Error, Result};

/// Token index into the vocabulary. Token [`EOS`] terminates a response.
pub type Token = usize;

/// End-of-sequence token.
pub const EOS: Token = 0;

// ---------------------------------------------------------------------------
// VocabSpec
// ---------------------------------------------------------------------------

/// Vocabulary size and maximum response length; fixes the response space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabSpec {
    vocab_size: usize,
    max_len: usize,
}

impl VocabSpec {
    pub fn new(vocab_size: usize, max_len: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidSpec(format!(
                "vocab_size must be >= 2, got {vocab_size}"
            )));
        }
        if max_len < 1 {
            return Err(Error::InvalidSpec("max_len must be >= 1".into()));
        }
        Ok(Self {
            vocab_size,
            max_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Number of valid responses: sequences EOS-terminated before `max_len`
    /// plus all length-`max_len` sequences.
    pub fn space_size(&self) -> usize {
        let k = self.vocab_size - 1; // non-EOS alternatives per step
        let mut total = 0;
        let mut prefix_count = 1; // non-EOS prefixes of length l-1
        for len in 1..=self.max_len {
            if len < self.max_len {
                total += prefix_count; // EOS at position len
            } else {
                total += prefix_count * self.vocab_size;
            }
            prefix_count *= k;
        }
        total
    }

    /// Number of next-token contexts per prompt: non-EOS prefixes of length
    /// `0..max_len`.
    pub fn contexts_per_prompt(&self) -> usize {
        let k = self.vocab_size - 1;
        let mut total = 0;
        let mut level = 1;
        for _ in 0..self.max_len {
            total += level;
            level *= k;
        }
        total
    }
}

// ---------------------------------------------------------------------------
// TokenSeq
// ---------------------------------------------------------------------------

/// A validated response: ordered tokens, length in `[1, max_len]`, no token
/// after EOS, and EOS-terminated when shorter than `max_len`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(Vec<Token>);

impl TokenSeq {
    pub fn new(tokens: Vec<Token>, vocab: &VocabSpec) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidSequence("empty sequence".into()));
        }
        if tokens.len() > vocab.max_len() {
            return Err(Error::InvalidSequence(format!(
                "length {} exceeds max_len {}",
                tokens.len(),
                vocab.max_len()
            )));
        }
        for (i, &t) in tokens.iter().enumerate() {
            if t >= vocab.vocab_size() {
                return Err(Error::InvalidSequence(format!(
                    "token {t} out of range at position {i}"
                )));
            }
            if t == EOS && i + 1 != tokens.len() {
                return Err(Error::InvalidSequence(format!(
                    "token follows EOS at position {i}"
                )));
            }
        }
        if tokens.len() < vocab.max_len() && *tokens.last().unwrap() != EOS {
            return Err(Error::InvalidSequence(
                "sequence shorter than max_len must end in EOS".into(),
            ));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid TokenSeq has length >= 1
    }
}

impl std::fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

// ---------------------------------------------------------------------------
// PromptSpace
// ---------------------------------------------------------------------------

/// Finite prompt set with sampling weights ρ. Prompts are identified by
/// index `0..len`.
#[derive(Clone, Debug)]
pub struct PromptSpace {
    weights: Vec<f64>,
}

impl PromptSpace {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("prompt space must be non-empty".into()));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpec("prompt space must be non-empty".into()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidSpec("prompt weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "prompt weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draw a prompt index from ρ by inverse CDF.
    pub fn sample(&self, rng: &mut Stream) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

// ---------------------------------------------------------------------------
// ResponseSpace
// ---------------------------------------------------------------------------

/// The enumerated response space in lexicographic token order, with a
/// reverse index. Enumeration order is deterministic so table layouts and
/// golden tests agree across modules.
#[derive(Clone, Debug)]
pub struct ResponseSpace {
    vocab: VocabSpec,
    responses: Vec<TokenSeq>,
    index: HashMap<Vec<Token>, usize>,
}

impl ResponseSpace {
    pub fn enumerate(vocab: VocabSpec) -> Self {
        let mut responses = Vec::with_capacity(vocab.space_size());
        let mut prefix = Vec::new();
        Self::walk(&vocab, &mut prefix, &mut responses);
        let index = responses
            .iter()
            .enumerate()
            .map(|(i, seq)| (seq.tokens().to_vec(), i))
            .collect();
        Self {
            vocab,
            responses,
            index,
        }
    }

    fn walk(vocab: &VocabSpec, prefix: &mut Vec<Token>, out: &mut Vec<TokenSeq>) {
        for t in 0..vocab.vocab_size() {
            prefix.push(t);
            if t == EOS || prefix.len() == vocab.max_len() {
                out.push(TokenSeq(prefix.clone()));
            } else {
                Self::walk(vocab, prefix, out);
            }
            prefix.pop();
        }
    }

    pub fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn get(&self, i: usize) -> &TokenSeq {
        &self.responses[i]
    }

    pub fn index_of(&self, seq: &TokenSeq) -> Option<usize> {
        self.index.get(seq.tokens()).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TokenSeq> {
        self.responses.iter()
    }
}

// ---------------------------------------------------------------------------
// LogitPolicy
// ---------------------------------------------------------------------------

/// Fully tabular autoregressive policy: one logit vector of length
/// `vocab_size` per (prompt, non-EOS prefix) context. The flat table is the
/// parameter vector θ.
///
/// Context layout: contexts of one prompt are stored contiguously, ordered
/// by prefix length and then lexicographically by prefix; θ index of token
/// `v` in context `c` is `c * vocab_size + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitPolicy {
    vocab: VocabSpec,
    n_prompts: usize,
    table: Vec<f64>,
}

impl LogitPolicy {
    /// All-zero logits: uniform next-token distribution in every context.
    pub fn uniform(vocab: VocabSpec, n_prompts: usize) -> Self {
        let d = n_prompts * vocab.contexts_per_prompt() * vocab.vocab_size();
        Self {
            vocab,
            n_prompts,
            table: vec![0.0; d],
        }
    }

    /// Policy with logits drawn i.i.d. from `N(0, scale^2)`.
    pub fn seeded(vocab: VocabSpec, n_prompts: usize, scale: f64, rng: &mut Stream) -> Self {
        let mut policy = Self::uniform(vocab, n_prompts);
        if scale > 0.0 {
            let normal = Normal::new(0.0, scale).expect("scale must be finite and positive");
            for v in policy.table.iter_mut() {
                *v = normal.sample(rng);
            }
        }
        policy
    }

    pub fn from_table(vocab: VocabSpec, n_prompts: usize, table: Vec<f64>) -> Result<Self> {
        let d = n_prompts * vocab.contexts_per_prompt() * vocab.vocab_size();
        if table.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "logit table has {} entries, expected {}",
                table.len(),
                d
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("logit table contains non-finite".into()));
        }
        Ok(Self {
            vocab,
            n_prompts,
            table,
        })
    }

    pub fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    /// Parameter dimension d.
    pub fn dim(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// Replace the parameter vector, keeping the shape.
    pub fn set_table(&mut self, table: &[f64]) {
        assert_eq!(table.len(), self.table.len());
        self.table.copy_from_slice(table);
    }

    /// `self + t * dir` as a new policy.
    pub fn add_scaled(&self, dir: &[f64], t: f64) -> Self {
        assert_eq!(dir.len(), self.table.len());
        let table = self
            .table
            .iter()
            .zip(dir)
            .map(|(a, b)| a + t * b)
            .collect();
        Self {
            vocab: self.vocab,
            n_prompts: self.n_prompts,
            table,
        }
    }

    /// Global context index for (prompt, prefix). The prefix must consist of
    /// non-EOS tokens and be shorter than `max_len`.
    pub fn context_index(&self, prompt: usize, prefix: &[Token]) -> Result<usize> {
        if prompt >= self.n_prompts {
            return Err(Error::ShapeMismatch(format!(
                "prompt {prompt} out of range ({} prompts)",
                self.n_prompts
            )));
        }
        let k = self.vocab.vocab_size() - 1;
        if prefix.len() >= self.vocab.max_len() {
            return Err(Error::InvalidSequence(format!(
                "prefix of length {} has no next-token context",
                prefix.len()
            )));
        }
        // offset of this prefix length: 1 + k + k^2 + ...
        let mut offset = 0;
        let mut level = 1;
        for _ in 0..prefix.len() {
            offset += level;
            level *= k;
        }
        let mut code = 0;
        for &t in prefix {
            if t == EOS || t >= self.vocab.vocab_size() {
                return Err(Error::InvalidSequence(format!(
                    "invalid prefix token {t}"
                )));
            }
            code = code * k + (t - 1);
        }
        Ok(prompt * self.vocab.contexts_per_prompt() + offset + code)
    }

    /// Logit vector of one context.
    pub fn logits(&self, ctx: usize) -> &[f64] {
        let v = self.vocab.vocab_size();
        &self.table[ctx * v..(ctx + 1) * v]
    }

    /// Per-context log next-token probabilities (log-softmax with max
    /// subtraction).
    pub fn log_softmax(&self, ctx: usize) -> Vec<f64> {
        let h = self.logits(ctx);
        let lse = log_sum_exp(h);
        h.iter().map(|&x| x - lse).collect()
    }

    /// Per-context next-token probabilities.
    pub fn softmax(&self, ctx: usize) -> Vec<f64> {
        self.log_softmax(ctx).iter().map(|&l| l.exp()).collect()
    }

    /// Joint log probability of a response: the sum of per-step log-softmax
    /// terms along the prefix path.
    pub fn log_prob(&self, prompt: usize, seq: &TokenSeq) -> Result<f64> {
        // Re-validate against this policy's vocab: the sequence may come
        // from a differently-shaped space.
        let seq = TokenSeq::new(seq.tokens().to_vec(), &self.vocab)?;
        let mut prefix: Vec<Token> = Vec::with_capacity(seq.len());
        let mut lp = 0.0;
        for &t in seq.tokens() {
            let ctx = self.context_index(prompt, &prefix)?;
            lp += self.log_softmax(ctx)[t];
            if t != EOS {
                prefix.push(t);
            }
        }
        Ok(lp)
    }

    /// Autoregressive draw: walk per-context softmax until EOS or `max_len`.
    pub fn sample_response(&self, prompt: usize, rng: &mut Stream) -> TokenSeq {
        let mut prefix: Vec<Token> = Vec::new();
        let mut tokens: Vec<Token> = Vec::new();
        loop {
            let ctx = self
                .context_index(prompt, &prefix)
                .expect("prefix stays within max_len by construction");
            let p = self.softmax(ctx);
            let t = sample_categorical(&p, rng);
            tokens.push(t);
            if t == EOS || tokens.len() == self.vocab.max_len() {
                break;
            }
            prefix.push(t);
        }
        TokenSeq(tokens)
    }

    /// Accumulate `scale * d log pi(seq | prompt) / d theta` into `out`.
    ///
    /// Per step with context c and chosen token t the contribution to the
    /// logit of token v in context c is `scale * (1{v=t} - softmax(c)[v])`;
    /// all other coordinates are untouched.
    pub fn accumulate_grad_log_prob(
        &self,
        prompt: usize,
        seq: &TokenSeq,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        assert_eq!(out.len(), self.dim());
        let v = self.vocab.vocab_size();
        let mut prefix: Vec<Token> = Vec::with_capacity(seq.len());
        for &t in seq.tokens() {
            let ctx = self.context_index(prompt, &prefix)?;
            let p = self.softmax(ctx);
            let base = ctx * v;
            for (j, pj) in p.iter().enumerate() {
                out[base + j] -= scale * pj;
            }
            out[base + t] += scale;
            if t != EOS {
                prefix.push(t);
            }
        }
        Ok(())
    }
}

/// Inverse-CDF draw from an unnormalized probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut Stream) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// Exact distribution views
// ---------------------------------------------------------------------------

/// Joint log-probabilities of every response in enumeration order.
pub fn joint_log_probs(policy: &LogitPolicy, prompt: usize, space: &ResponseSpace) -> Vec<f64> {
    space
        .iter()
        .map(|seq| {
            policy
                .log_prob(prompt, seq)
                .expect("enumerated sequences are valid by construction")
        })
        .collect()
}

/// Joint probabilities of every response in enumeration order.
pub fn joint_probs(policy: &LogitPolicy, prompt: usize, space: &ResponseSpace) -> Vec<f64> {
    joint_log_probs(policy, prompt, space)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Exact prompt-averaged KL divergence `E_{x~rho} KL(p(.|x) || q(.|x))` by
/// enumeration, with compensated accumulation.
pub fn kl_divergence(
    p: &LogitPolicy,
    q: &LogitPolicy,
    prompts: &PromptSpace,
    space: &ResponseSpace,
) -> Result<f64> {
    if p.vocab() != q.vocab() || p.n_prompts() != q.n_prompts() {
        return Err(Error::ShapeMismatch(
            "KL requires policies over the same vocab and prompts".into(),
        ));
    }
    if prompts.len() != p.n_prompts() {
        return Err(Error::ShapeMismatch(
            "prompt space size does not match policy".into(),
        ));
    }
    let mut acc = CompensatedSum::new();
    for x in 0..prompts.len() {
        let lp = joint_log_probs(p, x, space);
        let lq = joint_log_probs(q, x, space);
        for (lpi, lqi) in lp.iter().zip(&lq) {
            acc.add(prompts.weight(x) * lpi.exp() * (lpi - lqi));
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn vocab(v: usize, t: usize) -> VocabSpec {
        VocabSpec::new(v, t).unwrap()
    }

    #[test]
    fn space_sizes_match_termination_rule() {
        assert_eq!(vocab(2, 1).space_size(), 2); // [0], [1]
        assert_eq!(vocab(2, 2).space_size(), 3); // [0], [1,0], [1,1]
        assert_eq!(vocab(3, 2).space_size(), 7);
        assert_eq!(vocab(3, 3).space_size(), 1 + 2 + 4 * 3);
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete() {
        let space = ResponseSpace::enumerate(vocab(2, 2));
        let got: Vec<Vec<Token>> = space.iter().map(|s| s.tokens().to_vec()).collect();
        assert_eq!(got, vec![vec![0], vec![1, 0], vec![1, 1]]);

        let space = ResponseSpace::enumerate(vocab(3, 2));
        assert_eq!(space.len(), 7);
        let mut sorted: Vec<&TokenSeq> = space.iter().collect();
        sorted.sort();
        let in_order: Vec<&TokenSeq> = space.iter().collect();
        assert_eq!(sorted, in_order);
        for (i, seq) in space.iter().enumerate() {
            assert_eq!(space.index_of(seq), Some(i));
        }
    }

    #[test]
    fn token_seq_validation() {
        let v = vocab(3, 2);
        assert!(TokenSeq::new(vec![0], &v).is_ok());
        assert!(TokenSeq::new(vec![1, 0], &v).is_ok());
        assert!(TokenSeq::new(vec![2, 2], &v).is_ok());
        // EOS followed by a token
        assert!(TokenSeq::new(vec![0, 1], &v).is_err());
        // short sequence not ending in EOS
        assert!(TokenSeq::new(vec![1], &v).is_err());
        // out-of-range token
        assert!(TokenSeq::new(vec![3, 0], &v).is_err());
        // too long
        assert!(TokenSeq::new(vec![1, 1, 1], &v).is_err());
        assert!(TokenSeq::new(vec![], &v).is_err());
    }

    #[test]
    fn uniform_log_probs() {
        // vocab_size=2, length-1 response: log(1/2).
        let v = vocab(2, 1);
        let space = ResponseSpace::enumerate(v);
        let policy = LogitPolicy::uniform(v, 1);
        let y = TokenSeq::new(vec![1], &v).unwrap();
        assert!((policy.log_prob(0, &y).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        let total: f64 = joint_probs(&policy, 0, &space).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        // vocab_size=3, max_len=2, y=[1,0]: log(1/3) + log(1/3).
        let v = vocab(3, 2);
        let policy = LogitPolicy::uniform(v, 1);
        let y = TokenSeq::new(vec![1, 0], &v).unwrap();
        let expect = (1f64 / 3.0).ln() * 2.0;
        assert!((policy.log_prob(0, &y).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn log_prob_matches_enumeration_table() {
        let v = vocab(3, 2);
        let space = ResponseSpace::enumerate(v);
        let mut r = rng::stream(42, 0);
        let policy = LogitPolicy::seeded(v, 2, 1.3, &mut r);
        for x in 0..2 {
            let table = joint_probs(&policy, x, &space);
            let total: f64 = table.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "joint mass {total}");
            for (i, seq) in space.iter().enumerate() {
                let lp = policy.log_prob(x, seq).unwrap();
                assert!((lp.exp() - table[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn per_context_softmax_sums_to_one() {
        let v = vocab(4, 3);
        let mut r = rng::stream(7, 0);
        let policy = LogitPolicy::seeded(v, 1, 5.0, &mut r);
        for ctx in 0..v.contexts_per_prompt() {
            let p = policy.softmax(ctx);
            assert!(p.iter().all(|&x| x > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_policy_always_returns_argmax_sequence() {
        let v = vocab(3, 2);
        let mut policy = LogitPolicy::uniform(v, 1);
        // Force token 2 then EOS.
        let c0 = policy.context_index(0, &[]).unwrap();
        policy.table_mut()[c0 * 3 + 2] = 1e6;
        let c2 = policy.context_index(0, &[2]).unwrap();
        policy.table_mut()[c2 * 3] = 1e6;
        let mut r = rng::stream(1, 0);
        for _ in 0..50 {
            let y = policy.sample_response(0, &mut r);
            assert_eq!(y.tokens(), &[2, 0]);
        }
    }

    #[test]
    fn sampling_frequency_matches_symmetry() {
        // Uniform policy, V=2, T=1: frequency of [1] within 0.5 +- 0.01.
        let v = vocab(2, 1);
        let policy = LogitPolicy::uniform(v, 1);
        let mut r = rng::stream(3, 0);
        let n = 100_000;
        let mut ones = 0usize;
        for _ in 0..n {
            if policy.sample_response(0, &mut r).tokens() == [1] {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn sampling_matches_enumeration_over_million_draws() {
        let v = vocab(3, 2);
        let space = ResponseSpace::enumerate(v);
        let mut r = rng::stream(11, 0);
        let policy = LogitPolicy::seeded(v, 1, 0.9, &mut r);
        let probs = joint_probs(&policy, 0, &space);
        let n = 1_000_000usize;
        let mut counts = vec![0usize; space.len()];
        let mut draw_rng = rng::stream(11, 1);
        for _ in 0..n {
            let y = policy.sample_response(0, &mut draw_rng);
            counts[space.index_of(&y).unwrap()] += 1;
        }
        let max_err = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 5e-3, "max frequency error {max_err}");

        // Chi-square goodness of fit, d.o.f. = |space| - 1, alpha = 0.001.
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let crit = ChiSquared::new((space.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "chi-square {stat} >= {crit}");
    }

    #[test]
    fn kl_identity_and_hand_value() {
        let v = vocab(2, 1);
        let space = ResponseSpace::enumerate(v);
        let prompts = PromptSpace::uniform(1).unwrap();
        let p = LogitPolicy::uniform(v, 1);
        assert_eq!(kl_divergence(&p, &p, &prompts, &space).unwrap(), 0.0);

        // q = (0.75, 0.25) via logits (ln 3, 0).
        let q = LogitPolicy::from_table(v, 1, vec![3f64.ln(), 0.0]).unwrap();
        let kl = kl_divergence(&p, &q, &prompts, &space).unwrap();
        let expect = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((kl - expect).abs() < 1e-12);
        assert!((kl - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_equality() {
        let v = vocab(3, 2);
        let space = ResponseSpace::enumerate(v);
        let prompts = PromptSpace::uniform(2).unwrap();
        let mut r = rng::stream(5, 0);
        let p = LogitPolicy::seeded(v, 2, 1.0, &mut r);
        let q = LogitPolicy::seeded(v, 2, 1.0, &mut r);
        let kl = kl_divergence(&p, &q, &prompts, &space).unwrap();
        assert!(kl > 0.0);

        // Perturbing one coordinate away from p makes KL strictly positive.
        let mut bumped = p.clone();
        bumped.table_mut()[0] += 0.05;
        assert!(kl_divergence(&p, &bumped, &prompts, &space).unwrap() > 0.0);
        assert!(kl_divergence(&p, &p, &prompts, &space).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_matches_compensated_oracle_on_seeded_pair() {
        // Independent route: enumerate both joints, accumulate terms in
        // reverse order with a separate Neumaier pass.
        let v = vocab(3, 3);
        let space = ResponseSpace::enumerate(v);
        let prompts = PromptSpace::new(vec![0.3, 0.7]).unwrap();
        let mut r = rng::stream(9, 0);
        let p = LogitPolicy::seeded(v, 2, 1.5, &mut r);
        let q = LogitPolicy::seeded(v, 2, 1.5, &mut r);
        let kl = kl_divergence(&p, &q, &prompts, &space).unwrap();

        let mut terms = Vec::new();
        for x in 0..2 {
            for seq in space.iter() {
                let lp = p.log_prob(x, seq).unwrap();
                let lq = q.log_prob(x, seq).unwrap();
                terms.push(prompts.weight(x) * lp.exp() * (lp - lq));
            }
        }
        terms.reverse();
        let oracle = crate::math::compensated_sum(terms);
        assert!((kl - oracle).abs() < 1e-10);
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        let v = vocab(3, 2);
        let mut r = rng::stream(21, 0);
        let policy = LogitPolicy::seeded(v, 2, 0.8, &mut r);
        let seq = TokenSeq::new(vec![2, 1], &v).unwrap();
        let mut grad = vec![0.0; policy.dim()];
        policy
            .accumulate_grad_log_prob(1, &seq, 1.0, &mut grad)
            .unwrap();

        let base = policy.table().to_vec();
        let f = |t: &[f64]| {
            LogitPolicy::from_table(v, 2, t.to_vec())
                .unwrap()
                .log_prob(1, &seq)
                .unwrap()
        };
        let fd = crate::math::finite_diff_gradient(f, &base, 1e-6);
        for (a, b) in grad.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
