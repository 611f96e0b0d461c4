use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Decode, EnvError, Environment, SplitLevel, SplitSet};
use crate::grpo::{CategoricalPolicy, Choice};
use crate::primitives::{math_outcome, MathContext, TextOutput, BOX_CLOSE, BOX_OPEN};
use crate::Scalar;

/// Output vocabulary: digits, step markers, box delimiters, end token.
pub const VOCAB: [&str; 17] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "step", "first", "then", "next", BOX_OPEN, BOX_CLOSE, EOS,
];
pub const EOS: &str = "<eos>";
const EOS_ID: usize = 16;
const OPEN_ID: usize = 14;
const CLOSE_ID: usize = 15;
const BOS_FEATURE: usize = 16;
/// Previous token (16 non-terminal tokens or start) x cursor feature
/// (the truth digit under the cursor, or 10 past its end).
pub const NUM_ROWS: usize = 17 * 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
}

impl MathOp {
    pub fn symbol(self) -> &'static str {
        match self {
            MathOp::Add => "+",
            MathOp::Sub => "-",
            MathOp::Mul => "*",
        }
    }

    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            MathOp::Add => a + b,
            MathOp::Sub => a - b,
            MathOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MathEnvSpec {
    pub operand_max: u32,
    pub ops: Vec<MathOp>,
    /// Upper bound on problems generated per op.
    pub problems_per_op: usize,
    pub max_tokens: usize,
    pub split_seed: u64,
}

impl Default for MathEnvSpec {
    fn default() -> Self {
        Self {
            operand_max: 9,
            ops: vec![MathOp::Add, MathOp::Sub, MathOp::Mul],
            problems_per_op: 40,
            max_tokens: 8,
            split_seed: 0,
        }
    }
}

impl MathEnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if self.operand_max < 3 || self.operand_max > 999 {
            return err("operand_max must be in 3..=999");
        }
        if self.ops.is_empty() {
            return err("ops must not be empty");
        }
        if self.ops.iter().collect::<BTreeSet<_>>().len() != self.ops.len() {
            return err("ops must be distinct");
        }
        if self.problems_per_op < 4 {
            return err("problems_per_op must be at least 4");
        }
        if self.max_tokens < 3 {
            return err("max_tokens must be at least 3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MathProblem {
    pub op: MathOp,
    pub a: u32,
    pub b: u32,
    pub context: MathContext,
}

impl MathProblem {
    pub fn new(op: MathOp, a: u32, b: u32) -> Self {
        let digits = |n: u32| n.to_string().chars().map(|c| c.to_string()).collect::<Vec<_>>();
        let mut question = digits(a);
        question.push(op.symbol().to_string());
        question.extend(digits(b));
        Self {
            op,
            a,
            b,
            context: MathContext {
                question,
                ground_truth: digits(op.apply(a, b)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MathEnv {
    spec: MathEnvSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DecodeState {
    prev: usize,
    /// Digits emitted since the start or the last box delimiter.
    cursor: usize,
}

impl MathEnv {
    pub fn new(spec: MathEnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &MathEnvSpec {
        &self.spec
    }

    fn feature_row(&self, problem: &MathProblem, s: DecodeState) -> usize {
        let truth = &problem.context.ground_truth;
        let digit = truth
            .get(s.cursor)
            .map_or(10, |t| t.parse::<usize>().expect("truth tokens are digits"));
        s.prev * 11 + digit
    }

    fn advance(s: DecodeState, token: usize) -> DecodeState {
        let cursor = match token {
            0..=9 => s.cursor + 1,
            OPEN_ID | CLOSE_ID => 0,
            _ => s.cursor,
        };
        DecodeState { prev: token, cursor }
    }

    fn pool(&self, op: MathOp, a_range: std::ops::RangeInclusive<u32>, rng: &mut ChaCha8Rng) -> Vec<MathProblem> {
        let mut pool: Vec<MathProblem> = a_range
            .flat_map(|a| (0..=self.spec.operand_max).map(move |b| (a, b)))
            .filter(|&(a, b)| op != MathOp::Sub || a >= b)
            .map(|(a, b)| MathProblem::new(op, a, b))
            .collect();
        pool.shuffle(rng);
        pool
    }

    /// Deterministic splits for `level`, driven by `split_seed`.
    ///
    /// L1 tests on first operands from the top quarter of the range, which
    /// never appear in training; L2 holds out whole operations.
    pub fn generate_splits(&self, level: SplitLevel) -> Result<SplitSet<MathProblem>, EnvError> {
        let ops = &self.spec.ops;
        if level == SplitLevel::L2 && ops.len() < 2 {
            return Err(EnvError::InvalidSpec("L2 splits need at least 2 ops".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.split_seed);
        let mut order = ops.clone();
        order.shuffle(&mut rng);
        let held_out: BTreeSet<MathOp> = order.iter().take(ops.len().div_ceil(3)).copied().collect();
        let max = self.spec.operand_max;
        let cut = max - (max + 1) / 4;
        let n = self.spec.problems_per_op;

        let mut split = SplitSet {
            level,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for &op in ops {
            match level {
                SplitLevel::L0 => {
                    let pool: Vec<_> = self.pool(op, 0..=max, &mut rng).into_iter().take(n).collect();
                    let (tr, rest) = pool.split_at(pool.len() * 7 / 10);
                    let (va, te) = rest.split_at(rest.len() / 2);
                    split.train.extend_from_slice(tr);
                    split.validation.extend_from_slice(va);
                    split.test.extend_from_slice(te);
                }
                SplitLevel::L1 => {
                    let seen: Vec<_> = self.pool(op, 0..=cut, &mut rng).into_iter().take(n).collect();
                    let unseen = self.pool(op, cut + 1..=max, &mut rng);
                    let (tr, va) = seen.split_at(seen.len() * 8 / 10);
                    split.train.extend_from_slice(tr);
                    split.validation.extend_from_slice(va);
                    split.test.extend(unseen.into_iter().take(n / 4 + 1));
                }
                SplitLevel::L2 => {
                    let pool: Vec<_> = self.pool(op, 0..=max, &mut rng).into_iter().take(n).collect();
                    if held_out.contains(&op) {
                        split.test.extend(pool);
                    } else {
                        let (tr, va) = pool.split_at(pool.len() * 8 / 10);
                        split.train.extend_from_slice(tr);
                        split.validation.extend_from_slice(va);
                    }
                }
            }
        }
        Ok(split)
    }
}

impl Environment for MathEnv {
    type Context = MathProblem;
    type Output = TextOutput;

    fn policy_shape(&self) -> Vec<usize> {
        vec![VOCAB.len(); NUM_ROWS]
    }

    fn rollout<F: Scalar>(
        &self,
        policy: &CategoricalPolicy<F>,
        problem: &MathProblem,
        mut decode: Decode<'_>,
    ) -> (TextOutput, Vec<Choice>) {
        let mut s = DecodeState {
            prev: BOS_FEATURE,
            cursor: 0,
        };
        let mut tokens = Vec::with_capacity(self.spec.max_tokens);
        let mut choices = Vec::with_capacity(self.spec.max_tokens);
        for _ in 0..self.spec.max_tokens {
            let row = self.feature_row(problem, s);
            let token = decode.pick(policy, row);
            choices.push(Choice::new(row, token));
            if token == EOS_ID {
                break;
            }
            tokens.push(VOCAB[token].to_string());
            s = Self::advance(s, token);
        }
        (TextOutput { tokens }, choices)
    }

    fn success(&self, output: &TextOutput, problem: &MathProblem) -> bool {
        math_outcome(output, &problem.context)
    }
}

impl crate::primitives::Primitives<MathProblem> for TextOutput {
    fn primitives<F: Scalar>(&self, problem: &MathProblem) -> crate::primitives::PrimitiveVector<F> {
        crate::primitives::math_primitives(self, &problem.context)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::PolicyRole;

    #[test]
    fn problem_tokens() {
        let p = MathProblem::new(MathOp::Mul, 7, 8);
        assert_eq!(p.context.question, vec!["7", "*", "8"]);
        assert_eq!(p.context.ground_truth, vec!["5", "6"]);
    }

    #[test]
    fn scripted_policy_solves_problem() {
        let env = MathEnv::new(MathEnvSpec::default()).unwrap();
        let p = MathProblem::new(MathOp::Add, 7, 5);
        let mut policy = CategoricalPolicy::<f64>::uniform(env.policy_shape(), PolicyRole::Inner);
        // BOS -> boxed{, then copy the cursor digit, then close and stop.
        for prev in 0..17 {
            for d in 0..11 {
                let row = policy.row_logits_mut(prev * 11 + d);
                let target = match (prev, d) {
                    (BOS_FEATURE, _) => OPEN_ID,
                    (CLOSE_ID, _) => EOS_ID,
                    (_, 10) => CLOSE_ID,
                    (_, d) => d,
                };
                row[target] = 10.0;
            }
        }
        let (out, choices) = env.rollout(&policy, &p, Decode::Greedy);
        assert_eq!(out.tokens, vec!["boxed{", "1", "2", "}"]);
        assert_eq!(choices.len(), 5);
        assert!(env.success(&out, &p));
    }

    #[test]
    fn splits_respect_levels() {
        let env = MathEnv::new(MathEnvSpec::default()).unwrap();
        let l1 = env.generate_splits(SplitLevel::L1).unwrap();
        assert!(l1.train.iter().all(|p| p.a <= 7));
        assert!(l1.test.iter().all(|p| p.a > 7));
        let l2 = env.generate_splits(SplitLevel::L2).unwrap();
        let train_ops: BTreeSet<_> = l2.train.iter().map(|p| p.op).collect();
        let test_ops: BTreeSet<_> = l2.test.iter().map(|p| p.op).collect();
        assert!(train_ops.is_disjoint(&test_ops));
        let one = MathEnv::new(MathEnvSpec {
            ops: vec![MathOp::Add],
            ..MathEnvSpec::default()
        })
        .unwrap();
        assert!(one.generate_splits(SplitLevel::L2).is_err());
    }
}
