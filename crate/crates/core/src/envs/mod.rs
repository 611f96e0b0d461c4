//! Deterministic toy task generators with train/validation/test splits.
//!
//! `trajectory` is a gridworld of ordered interaction subgoals that emits a
//! per-step subgoal flag; `math` is an arithmetic question answered by a
//! token sequence.

pub mod math;
pub mod trajectory;

use serde::{Deserialize, Serialize};

use crate::grpo::{CategoricalPolicy, Choice};
use crate::primitives::Primitives;
use crate::Scalar;

pub use math::{MathEnv, MathEnvSpec, MathOp, MathProblem};
pub use trajectory::{EnvState, SubgoalKind, TrajectoryEnv, TrajectoryEnvSpec, TrajectoryTask};

/// Distribution shift between training and test contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitLevel {
    /// Test contexts reuse layouts/variants seen in training.
    L0,
    /// Test contexts use unseen variants of the training task types.
    L1,
    /// Test contexts use task types absent from training.
    L2,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet<C> {
    pub level: SplitLevel,
    pub train: Vec<C>,
    pub validation: Vec<C>,
    pub test: Vec<C>,
}

/// How a policy picks among the entries of a logit row while rolling out.
pub enum Decode<'a> {
    Sample(&'a mut rand_chacha::ChaCha8Rng),
    /// Argmax with ties to the lowest index.
    Greedy,
}

impl Decode<'_> {
    pub fn pick<F: Scalar>(&mut self, policy: &CategoricalPolicy<F>, row: usize) -> usize {
        match self {
            Decode::Sample(rng) => policy.sample(row, crate::grpo::Mask::ALL, *rng),
            Decode::Greedy => policy.greedy(row, crate::grpo::Mask::ALL),
        }
    }
}

/// Common surface of the task environments used by the inner loop.
pub trait Environment: Send + Sync {
    type Context: Clone + Send + Sync;
    type Output: Primitives<Self::Context>;

    /// Row widths of the task policy.
    fn policy_shape(&self) -> Vec<usize>;

    fn rollout<F: Scalar>(&self, policy: &CategoricalPolicy<F>, context: &Self::Context, decode: Decode<'_>)
        -> (Self::Output, Vec<Choice>);

    /// Task success predicate used by greedy evaluation.
    fn success(&self, output: &Self::Output, context: &Self::Context) -> bool;
}
