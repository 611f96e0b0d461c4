//! Atomic primitives: normalized `[0, 1]` features of one rollout output.
//!
//! Two families are provided. Trajectory tasks expose the binary outcome and
//! the mean step reward over the first, middle and last third of the steps.
//! Text tasks expose exact boxed-answer match, boxed format, presence of a
//! step marker and presence of the answer anywhere in the output.

use serde::{Deserialize, Serialize};

use crate::dsl::{EvalOutcome, RewardExpr};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Trajectory,
    MathText,
}

/// Evaluated primitive values `g1..gk`, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveVector<F> {
    values: Vec<F>,
}

impl<F: Scalar> PrimitiveVector<F> {
    /// Panics if a value lies outside `[0, 1]`.
    pub fn new(values: Vec<F>) -> Self {
        assert!(
            values.iter().all(|v| *v >= F::zero() && *v <= F::one()),
            "primitive values must lie in [0, 1]: {values:?}"
        );
        Self { values }
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: usize,
    /// 1 iff this step completed the next pending subgoal.
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryOutput {
    pub steps: Vec<TrajectoryStep>,
    pub success: bool,
}

impl TrajectoryOutput {
    /// Builds an output from a step-reward sequence; actions are zero.
    pub fn from_rewards(rewards: &[u8], success: bool) -> Self {
        Self {
            steps: rewards.iter().map(|&reward| TrajectoryStep { action: 0, reward }).collect(),
            success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextOutput {
    pub tokens: Vec<String>,
}

/// Question and ground-truth answer of a text task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MathContext {
    pub question: Vec<String>,
    pub ground_truth: Vec<String>,
}

pub const BOX_OPEN: &str = "boxed{";
pub const BOX_CLOSE: &str = "}";
pub const DEFAULT_STEP_MARKERS: [&str; 4] = ["step", "first", "then", "next"];

/// Splits text into tokens: whitespace-separated words, with `boxed{`,
/// `}` and each digit as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix(BOX_OPEN) {
                out.push(BOX_OPEN.to_string());
                rest = r;
            } else if let Some(r) = rest.strip_prefix(BOX_CLOSE) {
                out.push(BOX_CLOSE.to_string());
                rest = r;
            } else if rest.as_bytes()[0].is_ascii_digit() {
                out.push(rest[..1].to_string());
                rest = &rest[1..];
            } else {
                let end = rest
                    .char_indices()
                    .skip(1)
                    .find(|(i, c)| c.is_ascii_digit() || rest[*i..].starts_with(BOX_OPEN) || rest[*i..].starts_with(BOX_CLOSE))
                    .map_or(rest.len(), |(i, _)| i);
                out.push(rest[..end].to_string());
                rest = &rest[end..];
            }
        }
    }
    out
}

/// Segment boundaries `(ceil(L/3), ceil(2L/3))` splitting `L` steps into thirds.
pub fn thirds_bounds(len: usize) -> (usize, usize) {
    (len.div_ceil(3), (2 * len).div_ceil(3))
}

fn mean_reward(steps: &[TrajectoryStep]) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    steps.iter().map(|s| f64::from(s.reward)).sum::<f64>() / steps.len() as f64
}

fn third(o: &TrajectoryOutput, which: usize) -> f64 {
    let (a, b) = thirds_bounds(o.steps.len());
    let range = match which {
        0 => 0..a,
        1 => a..b,
        _ => b..o.steps.len(),
    };
    mean_reward(&o.steps[range])
}

/// `(outcome, first-third mean, middle-third mean, last-third mean)`.
pub fn trajectory_primitives<F: Scalar>(o: &TrajectoryOutput) -> PrimitiveVector<F> {
    PrimitiveVector::new(
        [f64::from(u8::from(o.success)), third(o, 0), third(o, 1), third(o, 2)]
            .into_iter()
            .map(F::lit)
            .collect(),
    )
}

/// Token span of the last well-formed `boxed{ ... }`, if any. An opener
/// restarts the span; a closer without an open box is ignored.
fn final_box(tokens: &[String]) -> Option<&[String]> {
    let mut open = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t == BOX_OPEN {
            open = Some(i);
        } else if t == BOX_CLOSE {
            if let Some(o) = open.take() {
                last = Some(&tokens[o + 1..i]);
            }
        }
    }
    last
}

fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn math_outcome(o: &TextOutput, c: &MathContext) -> bool {
    final_box(&o.tokens).is_some_and(|b| b == c.ground_truth.as_slice())
}

/// `(exact boxed match, boxed format, step marker present, truth present)`
/// using the default marker set.
pub fn math_primitives<F: Scalar>(o: &TextOutput, c: &MathContext) -> PrimitiveVector<F> {
    math_primitives_with(o, c, &DEFAULT_STEP_MARKERS)
}

pub fn math_primitives_with<F: Scalar>(o: &TextOutput, c: &MathContext, markers: &[&str]) -> PrimitiveVector<F> {
    let flag = |b: bool| F::lit(f64::from(u8::from(b)));
    PrimitiveVector::new(vec![
        flag(math_outcome(o, c)),
        flag(final_box(&o.tokens).is_some()),
        flag(o.tokens.iter().any(|t| markers.contains(&t.as_str()))),
        flag(contains_subsequence(&o.tokens, &c.ground_truth)),
    ])
}

/// A named primitive over outputs `O` in contexts `C`.
pub type PrimitiveFn<O, C> = fn(&O, &C) -> f64;

/// Ordered, named primitives; position `i` is addressed as `g{i+1}`.
pub struct PrimitiveSet<O, C> {
    pub name: &'static str,
    entries: Vec<(&'static str, PrimitiveFn<O, C>)>,
}

impl<O, C> PrimitiveSet<O, C> {
    pub fn new(name: &'static str) -> Self {
        Self { name, entries: Vec::new() }
    }

    pub fn register(mut self, name: &'static str, f: PrimitiveFn<O, C>) -> Self {
        self.entries.push((name, f));
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn evaluate<F: Scalar>(&self, o: &O, c: &C) -> PrimitiveVector<F> {
        PrimitiveVector::new(self.entries.iter().map(|(_, f)| F::lit(f(o, c))).collect())
    }
}

pub const TRAJECTORY_SET: &str = "trajectory_thirds";
pub const MATH_SET: &str = "math_basic";

pub fn trajectory_set<C>() -> PrimitiveSet<TrajectoryOutput, C> {
    PrimitiveSet::new(TRAJECTORY_SET)
        .register("outcome", |o: &TrajectoryOutput, _: &C| f64::from(u8::from(o.success)))
        .register("first_third", |o, _| third(o, 0))
        .register("middle_third", |o, _| third(o, 1))
        .register("last_third", |o, _| third(o, 2))
}

pub fn math_set() -> PrimitiveSet<TextOutput, MathContext> {
    PrimitiveSet::new(MATH_SET)
        .register("outcome", |o, c| math_primitives::<f64>(o, c).as_slice()[0])
        .register("format", |o, c| math_primitives::<f64>(o, c).as_slice()[1])
        .register("step_marker", |o, c| math_primitives::<f64>(o, c).as_slice()[2])
        .register("soft_outcome", |o, c| math_primitives::<f64>(o, c).as_slice()[3])
}

/// Resolves a registered primitive-set name to its task family and size.
pub fn lookup_set(name: &str) -> Option<(TaskFamily, usize)> {
    match name {
        TRAJECTORY_SET => Some((TaskFamily::Trajectory, trajectory_set::<()>().len())),
        MATH_SET => Some((TaskFamily::MathText, math_set().len())),
        _ => None,
    }
}

/// Outputs whose primitives can be computed in context `C`.
pub trait Primitives<C> {
    fn primitives<F: Scalar>(&self, context: &C) -> PrimitiveVector<F>;
}

impl<C> Primitives<C> for TrajectoryOutput {
    fn primitives<F: Scalar>(&self, _: &C) -> PrimitiveVector<F> {
        trajectory_primitives(self)
    }
}

impl Primitives<MathContext> for TextOutput {
    fn primitives<F: Scalar>(&self, context: &MathContext) -> PrimitiveVector<F> {
        math_primitives(self, context)
    }
}

/// Reward of one output: the expression executed over its primitives.
pub fn reward_of<F: Scalar, O: Primitives<C>, C>(expr: &RewardExpr, o: &O, c: &C) -> EvalOutcome<F> {
    expr.evaluate(o.primitives::<F>(c).as_slice())
}
