//! One inner run: train a fresh (or warm-started) task policy under a reward
//! expression and score it by greedy validation accuracy.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::{parse_with_primitives, RewardExpr};
use crate::envs::{Decode, EnvError, Environment, MathEnv, MathEnvSpec, SplitLevel, SplitSet, TrajectoryEnv, TrajectoryEnvSpec};
use crate::grpo::{train, CategoricalPolicy, PolicyRole, RolloutSampler, StepLog, StopReason, TrainingConfig};
use crate::primitives::{lookup_set, Primitives, TaskFamily, MATH_SET, TRAJECTORY_SET};
use crate::{Policy, Scalar};

/// Multiplier from the nominal step count to the hard step cap.
pub const BUDGET_FACTOR: f64 = 1.3;

/// Hard step cap for a run whose nominal length is `epochs`.
pub fn budget_for(epochs: usize) -> usize {
    (BUDGET_FACTOR * epochs as f64).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub family: TaskFamily,
    pub level: SplitLevel,
    /// Defaults to the family's own set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primitive_set: Option<String>,
    pub trajectory: TrajectoryEnvSpec,
    pub math: MathEnvSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            family: TaskFamily::Trajectory,
            level: SplitLevel::L0,
            primitive_set: None,
            trajectory: TrajectoryEnvSpec::default(),
            math: MathEnvSpec::default(),
        }
    }
}

impl TaskConfig {
    pub fn primitive_set_name(&self) -> &str {
        match (&self.primitive_set, self.family) {
            (Some(name), _) => name,
            (None, TaskFamily::Trajectory) => TRAJECTORY_SET,
            (None, TaskFamily::MathText) => MATH_SET,
        }
    }

    /// Number of primitives the configured set exposes.
    pub fn num_primitives(&self) -> Result<usize, EnvError> {
        match lookup_set(self.primitive_set_name()) {
            Some((family, k)) if family == self.family => Ok(k),
            Some(_) => Err(EnvError::InvalidSpec(format!(
                "primitive set `{}` does not apply to the {:?} family",
                self.primitive_set_name(),
                self.family
            ))),
            None => Err(EnvError::InvalidSpec(format!(
                "unknown primitive set `{}` (known: {TRAJECTORY_SET}, {MATH_SET})",
                self.primitive_set_name()
            ))),
        }
    }
}

/// An environment together with its generated splits.
#[derive(Debug, Clone)]
pub struct TaskData<E: Environment> {
    pub env: E,
    pub splits: SplitSet<E::Context>,
}

#[derive(Debug, Clone)]
pub enum Task {
    Trajectory(TaskData<TrajectoryEnv>),
    Math(TaskData<MathEnv>),
}

impl Task {
    pub fn build(cfg: &TaskConfig) -> Result<Self, EnvError> {
        cfg.num_primitives()?;
        let task = match cfg.family {
            TaskFamily::Trajectory => {
                let env = TrajectoryEnv::new(cfg.trajectory.clone())?;
                let splits = env.generate_splits(cfg.level)?;
                Task::Trajectory(TaskData { env, splits })
            }
            TaskFamily::MathText => {
                let env = MathEnv::new(cfg.math.clone())?;
                let splits = env.generate_splits(cfg.level)?;
                Task::Math(TaskData { env, splits })
            }
        };
        let (tr, va, te) = task.split_sizes();
        if tr == 0 || va == 0 || te == 0 {
            return Err(EnvError::InvalidSpec(format!(
                "empty split (train {tr}, validation {va}, test {te})"
            )));
        }
        Ok(task)
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        match self {
            Task::Trajectory(d) => (d.splits.train.len(), d.splits.validation.len(), d.splits.test.len()),
            Task::Math(d) => (d.splits.train.len(), d.splits.validation.len(), d.splits.test.len()),
        }
    }

    pub fn policy_shape(&self) -> Vec<usize> {
        match self {
            Task::Trajectory(d) => d.env.policy_shape(),
            Task::Math(d) => d.env.policy_shape(),
        }
    }

    /// Splits as JSON, for export.
    pub fn splits_json(&self) -> serde_json::Value {
        match self {
            Task::Trajectory(d) => serde_json::to_value(&d.splits),
            Task::Math(d) => serde_json::to_value(&d.splits),
        }
        .expect("splits serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Scratch,
    /// Start from these policy logits.
    WarmStart(Vec<f64>),
}

/// Everything needed to reproduce one inner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRunSpec {
    pub expr: String,
    pub init: Init,
    pub budget_steps: usize,
    pub task: TaskConfig,
    pub training: TrainingConfig,
}

impl InnerRunSpec {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn params_digest(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminatedReason {
    /// Ran every planned iteration.
    Completed,
    Converged,
    BudgetExhausted,
    InvalidReward,
}

impl TerminatedReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminatedReason::Completed => "completed",
            TerminatedReason::Converged => "converged",
            TerminatedReason::BudgetExhausted => "budget_exhausted",
            TerminatedReason::InvalidReward => "invalid_reward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRunResult {
    pub expr: String,
    /// Greedy validation accuracy; the outer reward.
    pub v: f64,
    /// Greedy test accuracy; logged only.
    pub test_v: f64,
    pub terminated_reason: TerminatedReason,
    pub steps_used: usize,
    /// Why the reward was rejected, for invalid runs.
    pub detail: Option<String>,
    pub params_digest: Option<String>,
    pub log: Vec<StepLog>,
    #[serde(skip)]
    pub trained_params: Option<Vec<f64>>,
}

impl InnerRunResult {
    pub fn invalid(expr: &str, detail: impl Into<String>) -> Self {
        Self {
            expr: expr.to_string(),
            v: 0.0,
            test_v: 0.0,
            terminated_reason: TerminatedReason::InvalidReward,
            steps_used: 0,
            detail: Some(detail.into()),
            params_digest: None,
            log: Vec::new(),
            trained_params: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.terminated_reason != TerminatedReason::InvalidReward
    }
}

/// Adapts an environment's training split to the GRPO trainer.
pub struct EnvSampler<'a, E: Environment> {
    pub env: &'a E,
    pub contexts: &'a [E::Context],
}

impl<F: Scalar, E: Environment> RolloutSampler<F> for EnvSampler<'_, E> {
    type Context = E::Context;
    type Output = E::Output;

    fn contexts(&self) -> &[E::Context] {
        self.contexts
    }

    fn sample(
        &self,
        policy: &CategoricalPolicy<F>,
        context: &E::Context,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> (E::Output, Vec<crate::grpo::Choice>) {
        self.env.rollout(policy, context, Decode::Sample(rng))
    }
}

/// Fraction of `contexts` solved under greedy decoding.
pub fn evaluate_perf<F: Scalar, E: Environment>(env: &E, policy: &CategoricalPolicy<F>, contexts: &[E::Context]) -> f64 {
    assert!(!contexts.is_empty(), "evaluate_perf needs at least one context");
    let solved = contexts
        .iter()
        .filter(|c| {
            let (out, _) = env.rollout(policy, c, Decode::Greedy);
            env.success(&out, c)
        })
        .count();
    solved as f64 / contexts.len() as f64
}

fn initial_policy(shape: Vec<usize>, init: &Init) -> Result<Policy, String> {
    match init {
        Init::Scratch => Ok(CategoricalPolicy::uniform(shape, PolicyRole::Inner)),
        Init::WarmStart(p) => {
            let n: usize = shape.iter().sum();
            if p.len() != n {
                return Err(format!("warm-start params have {} entries, policy needs {n}", p.len()));
            }
            Ok(CategoricalPolicy::with_logits(shape, p.clone(), PolicyRole::Inner))
        }
    }
}

fn effective_config(spec: &InnerRunSpec) -> TrainingConfig {
    let mut cfg = spec.training.clone();
    cfg.max_steps_budget = cfg.max_steps_budget.min(spec.budget_steps);
    cfg
}

fn run_on<E: Environment>(spec: &InnerRunSpec, expr: &RewardExpr, data: &TaskData<E>) -> InnerRunResult {
    let policy = match initial_policy(data.env.policy_shape(), &spec.init) {
        Ok(p) => p,
        Err(e) => return InnerRunResult::invalid(&spec.expr, e),
    };
    let cfg = effective_config(spec);
    let sampler = EnvSampler {
        env: &data.env,
        contexts: &data.splits.train,
    };
    let reward = |o: &E::Output, c: &E::Context| expr.evaluate(o.primitives::<f64>(c).as_slice());
    let outcome = match train(policy, &sampler, reward, &cfg) {
        Ok(o) => o,
        Err(e) => return InnerRunResult::invalid(&spec.expr, e.to_string()),
    };
    let terminated_reason = match outcome.stop {
        StopReason::RewardErrors { step } => {
            return InnerRunResult::invalid(
                &spec.expr,
                format!("reward evaluation failed for more than half the samples at step {step}"),
            )
        }
        StopReason::Completed => TerminatedReason::Completed,
        StopReason::Converged => TerminatedReason::Converged,
        StopReason::BudgetExhausted => TerminatedReason::BudgetExhausted,
    };
    finish(
        spec,
        &data.env,
        &data.splits,
        outcome.policy,
        outcome.log,
        outcome.steps_completed,
        terminated_reason,
    )
}

fn finish<E: Environment>(
    spec: &InnerRunSpec,
    env: &E,
    splits: &SplitSet<E::Context>,
    policy: Policy,
    log: Vec<StepLog>,
    steps_used: usize,
    terminated_reason: TerminatedReason,
) -> InnerRunResult {
    let v = evaluate_perf(env, &policy, &splits.validation);
    let test_v = evaluate_perf(env, &policy, &splits.test);
    let params = policy.params().to_vec();
    InnerRunResult {
        expr: spec.expr.clone(),
        v,
        test_v,
        terminated_reason,
        steps_used,
        detail: None,
        params_digest: Some(params_digest(&params)),
        log,
        trained_params: Some(params),
    }
}

/// Trains one inner policy under `spec.expr`. Unparseable expressions and
/// runs whose reward fails on more than half of a step's samples return an
/// `InvalidReward` result with `v = 0` and no steps charged.
pub fn run_inner(spec: &InnerRunSpec, task: &Task) -> InnerRunResult {
    if spec.budget_steps == 0 {
        return InnerRunResult::invalid(&spec.expr, "budget_steps must be positive");
    }
    let k = match spec.task.num_primitives() {
        Ok(k) => k,
        Err(e) => return InnerRunResult::invalid(&spec.expr, e.to_string()),
    };
    let expr = match parse_with_primitives(&spec.expr, k) {
        Ok(e) => e,
        Err(e) => return InnerRunResult::invalid(&spec.expr, format!("parse error: {e}")),
    };
    match task {
        Task::Trajectory(d) => run_on(spec, &expr, d),
        Task::Math(d) => run_on(spec, &expr, d),
    }
}

/// Reference trainer that rewards task success directly, bypassing the
/// expression machinery. Used as the oracle for the `g1` reduction.
pub fn run_outcome_baseline(spec: &InnerRunSpec, task: &Task) -> InnerRunResult {
    fn go<E: Environment>(spec: &InnerRunSpec, data: &TaskData<E>) -> InnerRunResult {
        let policy = initial_policy(data.env.policy_shape(), &spec.init).expect("valid init");
        let sampler = EnvSampler {
            env: &data.env,
            contexts: &data.splits.train,
        };
        let reward = |o: &E::Output, c: &E::Context| Ok(if data.env.success(o, c) { 1.0 } else { 0.0 });
        let out = train(policy, &sampler, reward, &effective_config(spec)).expect("outcome reward is finite");
        let reason = match out.stop {
            StopReason::Converged => TerminatedReason::Converged,
            StopReason::BudgetExhausted => TerminatedReason::BudgetExhausted,
            _ => TerminatedReason::Completed,
        };
        finish(spec, &data.env, &data.splits, out.policy, out.log, out.steps_completed, reason)
    }
    match task {
        Task::Trajectory(d) => go(spec, d),
        Task::Math(d) => go(spec, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(expr: &str) -> InnerRunSpec {
        InnerRunSpec {
            expr: expr.to_string(),
            init: Init::Scratch,
            budget_steps: budget_for(5),
            task: TaskConfig::default(),
            training: TrainingConfig {
                epochs: 5,
                ..TrainingConfig::default()
            },
        }
    }

    #[test]
    fn budget_rounds_up() {
        assert_eq!(budget_for(100), 130);
        assert_eq!(budget_for(7), 10);
    }

    #[test]
    fn unbalanced_expression_is_penalized() {
        let s = spec("g1 + 0.5 * (g2 + 0.5 * (g3 + 0.5 * (g4))))");
        let task = Task::build(&s.task).unwrap();
        let r = run_inner(&s, &task);
        assert_eq!(r.terminated_reason, TerminatedReason::InvalidReward);
        assert_eq!((r.v, r.steps_used), (0.0, 0));
    }

    #[test]
    fn constant_singularity_aborts_after_first_step() {
        let s = spec("g1 / (g2 - g2)");
        let task = Task::build(&s.task).unwrap();
        let r = run_inner(&s, &task);
        assert_eq!(r.terminated_reason, TerminatedReason::InvalidReward);
        assert_eq!((r.v, r.steps_used), (0.0, 0));
        assert!(r.detail.unwrap().contains("step 0"));
    }

    #[test]
    fn primitive_outside_set_is_penalized() {
        let r = run_inner(&spec("g5"), &Task::build(&TaskConfig::default()).unwrap());
        assert!(!r.is_valid());
    }

    #[test]
    fn valid_run_respects_budget_and_is_deterministic() {
        let s = spec("g1 + 0.5 * g2");
        let task = Task::build(&s.task).unwrap();
        let a = run_inner(&s, &task);
        let b = run_inner(&s, &task);
        assert_eq!(a, b);
        assert!(a.is_valid());
        assert!(a.steps_used <= s.budget_steps);
        assert!((0.0..=1.0).contains(&a.v));
    }

    #[test]
    fn spec_hash_changes_with_seed() {
        let a = spec("g1");
        let mut b = a.clone();
        b.training.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
