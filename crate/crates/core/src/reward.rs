//! Oracle rewards, the implicit policy reward, and Bradley-Terry labeling.
//!
//! An [`OracleReward`] is a table of true rewards over the enumerable
//! response space. It can be an arbitrary table or *realizable*: derived
//! from a designated optimum policy via the implicit reward, in which case
//! the optimum policy is retained for the theorem-verification harnesses
//! that need it.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::lm::{LogitPolicy, PromptSpace, ResponseSpace, TokenSeq};
use crate::math::sigmoid;
use crate::rng::Stream;
use crate::sampling::CostLedger;
use crate::{Error, Result};

/// One labeled comparison: `winner` was preferred over `loser` for `prompt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreferenceTriple {
    pub prompt: usize,
    pub winner: TokenSeq,
    pub loser: TokenSeq,
}

/// Implicit reward of a policy against a reference:
/// `beta * (log pi_theta(y|x) - log pi_ref(y|x))`.
pub fn implicit_reward(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    seq: &TokenSeq,
) -> Result<f64> {
    if theta.vocab() != reference.vocab() || theta.n_prompts() != reference.n_prompts() {
        return Err(Error::ShapeMismatch(
            "policy and reference must share vocab and prompts".into(),
        ));
    }
    Ok(beta * (theta.log_prob(prompt, seq)? - reference.log_prob(prompt, seq)?))
}

/// Implicit rewards of every response in enumeration order.
pub fn implicit_reward_table(
    theta: &LogitPolicy,
    reference: &LogitPolicy,
    beta: f64,
    prompt: usize,
    space: &ResponseSpace,
) -> Vec<f64> {
    space
        .iter()
        .map(|seq| {
            implicit_reward(theta, reference, beta, prompt, seq)
                .expect("enumerated sequences are valid")
        })
        .collect()
}

/// True reward table over (prompt, response) with a declared sup-norm bound.
#[derive(Clone, Debug)]
pub struct OracleReward {
    space: ResponseSpace,
    n_prompts: usize,
    /// Row-major: `table[x * space.len() + y]`.
    table: Vec<f64>,
    bound: f64,
    theta_star: Option<LogitPolicy>,
}

impl OracleReward {
    /// Arbitrary table oracle. `bound` is a declared hypothesis, checked
    /// against the entries, not a runtime clamp.
    pub fn from_table(
        space: ResponseSpace,
        n_prompts: usize,
        table: Vec<f64>,
        bound: f64,
    ) -> Result<Self> {
        if table.len() != n_prompts * space.len() {
            return Err(Error::ShapeMismatch(format!(
                "reward table has {} entries, expected {}",
                table.len(),
                n_prompts * space.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("reward table contains non-finite".into()));
        }
        let max_abs = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs > bound {
            return Err(Error::InvalidSpec(format!(
                "reward magnitude {max_abs} exceeds declared bound {bound}"
            )));
        }
        Ok(Self {
            space,
            n_prompts,
            table,
            bound,
            theta_star: None,
        })
    }

    /// Realizable oracle: `r* = r_{theta*}` via the implicit reward. The
    /// bound is the measured sup norm and `theta_star` is retained.
    pub fn realizable(
        theta_star: LogitPolicy,
        reference: &LogitPolicy,
        beta: f64,
        space: ResponseSpace,
    ) -> Result<Self> {
        let n_prompts = theta_star.n_prompts();
        let mut table = Vec::with_capacity(n_prompts * space.len());
        for x in 0..n_prompts {
            table.extend(implicit_reward_table(
                &theta_star,
                reference,
                beta,
                x,
                &space,
            ));
        }
        let bound = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            space,
            n_prompts,
            table,
            bound,
            theta_star: Some(theta_star),
        })
    }

    pub fn space(&self) -> &ResponseSpace {
        &self.space
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    /// Declared sup-norm bound R.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// The designated optimum policy when the oracle is realizable.
    pub fn theta_star(&self) -> Option<&LogitPolicy> {
        self.theta_star.as_ref()
    }

    /// Reward of a response by enumeration index.
    pub fn value_at(&self, prompt: usize, response_idx: usize) -> f64 {
        self.table[prompt * self.space.len() + response_idx]
    }

    /// Reward row of one prompt, in enumeration order.
    pub fn row(&self, prompt: usize) -> &[f64] {
        let s = self.space.len();
        &self.table[prompt * s..(prompt + 1) * s]
    }

    /// Reward of a response given as a sequence.
    pub fn value(&self, prompt: usize, seq: &TokenSeq) -> Result<f64> {
        let idx = self
            .space
            .index_of(seq)
            .ok_or_else(|| Error::InvalidSequence(format!("{seq} not in response space")))?;
        Ok(self.value_at(prompt, idx))
    }

    /// Bradley-Terry preference probability `P(ya beats yb | x)`.
    pub fn bt_probability(&self, prompt: usize, ya: &TokenSeq, yb: &TokenSeq) -> Result<f64> {
        Ok(sigmoid(
            self.value(prompt, ya)? - self.value(prompt, yb)?,
        ))
    }

    /// Draw a Bradley-Terry label for the pair and return the ordered
    /// triple. One call reads two responses, so it meters two annotation
    /// cost units.
    pub fn label_pair(
        &self,
        prompt: usize,
        ya: &TokenSeq,
        yb: &TokenSeq,
        rng: &mut Stream,
        ledger: &mut CostLedger,
    ) -> Result<PreferenceTriple> {
        let p = self.bt_probability(prompt, ya, yb)?;
        ledger.add_annotation(2);
        let u: f64 = rng.random();
        let (winner, loser) = if u < p { (ya, yb) } else { (yb, ya) };
        Ok(PreferenceTriple {
            prompt,
            winner: winner.clone(),
            loser: loser.clone(),
        })
    }

    /// Write the table as plain text: one `prompt tokens reward` line per
    /// entry, `#` comments allowed.
    pub fn write_table(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# prompt  response-tokens  reward")?;
        for x in 0..self.n_prompts {
            for (i, seq) in self.space.iter().enumerate() {
                writeln!(f, "{x} {seq} {}", self.value_at(x, i))?;
            }
        }
        Ok(())
    }

    /// Load a table oracle from the plain-text format of [`write_table`].
    /// Every (prompt, response) pair must appear exactly once.
    pub fn read_table(path: &Path, space: ResponseSpace, n_prompts: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut table = vec![f64::NAN; n_prompts * space.len()];
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line_num = lineno + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let parts: Vec<&str> = body.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: line_num,
                    msg: format!("expected 'prompt tokens reward', got '{body}'"),
                });
            }
            let prompt: usize = parts[0].parse().map_err(|_| Error::Parse {
                line: line_num,
                msg: format!("bad prompt id '{}'", parts[0]),
            })?;
            if prompt >= n_prompts {
                return Err(Error::Parse {
                    line: line_num,
                    msg: format!("prompt {prompt} out of range ({n_prompts} prompts)"),
                });
            }
            let tokens: Vec<usize> = parts[1]
                .split(',')
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line: line_num,
                        msg: format!("bad token '{t}'"),
                    })
                })
                .collect::<Result<_>>()?;
            let seq = TokenSeq::new(tokens, space.vocab()).map_err(|e| Error::Parse {
                line: line_num,
                msg: e.to_string(),
            })?;
            let idx = space.index_of(&seq).ok_or_else(|| Error::Parse {
                line: line_num,
                msg: format!("{seq} not in response space"),
            })?;
            let reward: f64 = parts[2].parse().map_err(|_| Error::Parse {
                line: line_num,
                msg: format!("bad reward '{}'", parts[2]),
            })?;
            table[prompt * space.len() + idx] = reward;
        }
        if let Some(pos) = table.iter().position(|v| v.is_nan()) {
            let (x, y) = (pos / space.len(), pos % space.len());
            return Err(Error::InvalidSpec(format!(
                "missing reward for prompt {x}, response {}",
                space.get(y)
            )));
        }
        let bound = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::from_table(space, n_prompts, table, bound)
    }

    /// Expected oracle reward of a policy, `E_{x~rho, y~pi}[r*]`.
    pub fn expected_reward(
        &self,
        policy: &LogitPolicy,
        prompts: &PromptSpace,
    ) -> f64 {
        let mut total = 0.0;
        for x in 0..prompts.len() {
            let probs = crate::lm::joint_probs(policy, x, &self.space);
            let row = self.row(x);
            total += prompts.weight(x)
                * probs
                    .iter()
                    .zip(row)
                    .map(|(p, r)| p * r)
                    .sum::<f64>();
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::VocabSpec;
    use crate::rng;

    fn setup() -> (VocabSpec, ResponseSpace, LogitPolicy, LogitPolicy) {
        let v = VocabSpec::new(3, 2).unwrap();
        let space = ResponseSpace::enumerate(v);
        let mut r = rng::stream(13, 0);
        let reference = LogitPolicy::seeded(v, 2, 0.5, &mut r);
        let theta = LogitPolicy::seeded(v, 2, 0.8, &mut r);
        (v, space, reference, theta)
    }

    #[test]
    fn implicit_reward_zero_at_reference_and_linear_in_beta() {
        let (v, space, reference, theta) = setup();
        let _ = v;
        for x in 0..2 {
            for seq in space.iter() {
                let r0 = implicit_reward(&reference, &reference, 0.3, x, seq).unwrap();
                assert_eq!(r0, 0.0);
                let r1 = implicit_reward(&theta, &reference, 0.2, x, seq).unwrap();
                let r2 = implicit_reward(&theta, &reference, 0.4, x, seq).unwrap();
                assert!((r2 - 2.0 * r1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn implicit_reward_matches_enumeration_ratio() {
        let (_, space, reference, theta) = setup();
        let beta = 0.1;
        for x in 0..2 {
            let pt = crate::lm::joint_probs(&theta, x, &space);
            let pr = crate::lm::joint_probs(&reference, x, &space);
            for (i, seq) in space.iter().enumerate() {
                let r = implicit_reward(&theta, &reference, beta, x, seq).unwrap();
                assert!((r - beta * (pt[i] / pr[i]).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bt_probability_values_and_symmetry() {
        let (_, space, _, _) = setup();
        let s = space.len();
        // Rewards 0 everywhere except response 1 of prompt 0 which gets 1.0,
        // and response 2 which gets 50.0 on prompt 1.
        let mut table = vec![0.0; 2 * s];
        table[1] = 1.0;
        table[s + 2] = 50.0;
        let oracle = OracleReward::from_table(space.clone(), 2, table, 50.0).unwrap();

        let y0 = space.get(0).clone();
        let y1 = space.get(1).clone();
        let y2 = space.get(2).clone();

        // Equal rewards -> 1/2.
        assert_eq!(oracle.bt_probability(0, &y0, &y2).unwrap(), 0.5);
        // Gap 1.0 -> sigmoid(1).
        let p = oracle.bt_probability(0, &y1, &y0).unwrap();
        assert!((p - 0.731059).abs() < 1e-6);
        // Gap 50 -> saturated.
        assert!(oracle.bt_probability(1, &y2, &y0).unwrap() >= 1.0 - 2e-22);
        // bt(a,b) + bt(b,a) = 1.
        for a in space.iter() {
            for b in space.iter() {
                let pab = oracle.bt_probability(0, a, b).unwrap();
                let pba = oracle.bt_probability(0, b, a).unwrap();
                assert!((pab + pba - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bt_invariant_to_per_prompt_shift() {
        let (_, space, reference, theta) = setup();
        let base = OracleReward::realizable(theta.clone(), &reference, 0.3, space.clone()).unwrap();
        let s = space.len();
        let mut shifted = base.table.clone();
        for v in shifted[0..s].iter_mut() {
            *v += 7.5;
        }
        for v in shifted[s..].iter_mut() {
            *v -= 2.25;
        }
        let shifted = OracleReward::from_table(space.clone(), 2, shifted, 60.0).unwrap();
        for x in 0..2 {
            for a in space.iter() {
                for b in space.iter() {
                    let p0 = base.bt_probability(x, a, b).unwrap();
                    let p1 = shifted.bt_probability(x, a, b).unwrap();
                    assert!((p0 - p1).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn realizable_oracle_matches_implicit_reward_entrywise() {
        let (_, space, reference, theta) = setup();
        let beta = 0.25;
        let oracle =
            OracleReward::realizable(theta.clone(), &reference, beta, space.clone()).unwrap();
        for x in 0..2 {
            for (i, seq) in space.iter().enumerate() {
                let r = implicit_reward(&theta, &reference, beta, x, seq).unwrap();
                assert!((r - oracle.value_at(x, i)).abs() < 1e-12);
            }
        }
        assert!(oracle.theta_star().is_some());
    }

    #[test]
    fn label_pair_frequencies_and_cost() {
        let (_, space, _, _) = setup();
        let s = space.len();
        let mut table = vec![0.0; 2 * s];
        table[0] = 50.0; // saturated winner on prompt 0
        table[s] = 1.0; // gap 1.0 on prompt 1
        let oracle = OracleReward::from_table(space.clone(), 2, table, 50.0).unwrap();
        let y0 = space.get(0).clone();
        let y1 = space.get(1).clone();

        let mut ledger = CostLedger::default();
        let mut r = rng::stream(17, 0);
        let n = 10_000;

        let mut wins = 0;
        for _ in 0..n {
            let t = oracle.label_pair(0, &y0, &y1, &mut r, &mut ledger).unwrap();
            if t.winner == y0 {
                wins += 1;
            }
        }
        assert_eq!(wins, n); // deterministic at gap 50
        assert_eq!(ledger.annotation(), 2 * n as u64);

        let mut wins_gap0 = 0;
        let mut wins_gap1 = 0;
        for _ in 0..n {
            // gap 0 on prompt 0 between equal-reward responses
            let t = oracle.label_pair(0, &y1, &space.get(2).clone(), &mut r, &mut ledger).unwrap();
            if t.winner == y1 {
                wins_gap0 += 1;
            }
            let t = oracle.label_pair(1, &y0, &y1, &mut r, &mut ledger).unwrap();
            if t.winner == y0 {
                wins_gap1 += 1;
            }
        }
        let f0 = wins_gap0 as f64 / n as f64;
        let f1 = wins_gap1 as f64 / n as f64;
        assert!((f0 - 0.5).abs() < 0.02, "fair-coin frequency {f0}");
        assert!((f1 - 0.731).abs() < 0.02, "gap-1 frequency {f1}");
    }

    #[test]
    fn table_roundtrip_through_text_file() {
        let (_, space, reference, theta) = setup();
        let oracle = OracleReward::realizable(theta, &reference, 0.4, space.clone()).unwrap();
        let dir = std::env::temp_dir().join("preflab_reward_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("oracle.txt");
        oracle.write_table(&path).unwrap();
        let loaded = OracleReward::read_table(&path, space.clone(), 2).unwrap();
        for x in 0..2 {
            for i in 0..space.len() {
                assert!((oracle.value_at(x, i) - loaded.value_at(x, i)).abs() < 1e-12);
            }
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn from_table_rejects_bound_violation() {
        let (_, space, _, _) = setup();
        let table = vec![2.0; 2 * space.len()];
        assert!(OracleReward::from_table(space, 2, table, 1.0).is_err());
    }
}
