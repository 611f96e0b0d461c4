//! Group Relative Policy Optimization over categorical policy tables.
//!
//! Every output is a sequence of [`Choice`]s. A group of `G` outputs sampled
//! for one context is scored, rewards are standardized within the group,
//! and the clipped importance-weighted surrogate (minus a per-step exact
//! KL penalty to a reference policy) is maximized. The sequence-level
//! advantage is broadcast to every step of its output.

mod policy;
mod train;

pub use policy::{CategoricalPolicy, Choice, Mask, PolicyRole};
pub use train::{train, write_step_log_csv, RolloutSampler, StepLog, StopReason, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Standard deviation below which a group is treated as constant.
pub const MIN_GROUP_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group of {0} rewards; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("non-finite reward at index {0}")]
    NonFiniteReward(usize),
    #[error("surrogate loss is not finite")]
    NonFiniteLoss,
    #[error("batch contains no groups")]
    EmptyBatch,
}

/// Population mean/std standardization of one group's rewards.
/// Groups with std below [`MIN_GROUP_STD`] get all-zero advantages.
pub fn compute_advantages<F: Scalar>(rewards: &[F]) -> Result<Vec<F>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(i));
    }
    let n = F::lit(rewards.len() as f64);
    let mean = rewards.iter().copied().sum::<F>() / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<F>() / n;
    if !mean.is_finite() || !var.is_finite() {
        return Err(GrpoError::NonFiniteReward(0));
    }
    let std = var.sqrt();
    if std < F::lit(MIN_GROUP_STD) {
        return Ok(vec![F::zero(); rewards.len()]);
    }
    Ok(rewards.iter().map(|&r| (r - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyper-parameters shared by the inner and outer loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    /// Planned number of sample-and-update iterations.
    pub epochs: usize,
    /// Hard cap on iterations regardless of `epochs`.
    pub max_steps_budget: usize,
    /// Contexts drawn per iteration; each yields one group.
    pub batch_contexts: usize,
    /// Gradient steps taken on each sampled batch.
    pub updates_per_batch: usize,
    pub optimizer: OptimizerKind,
    /// Fraction of reward-evaluation failures in one iteration above which
    /// training aborts.
    pub max_error_rate: f64,
    /// Stop after this many consecutive iterations in which every group had
    /// zero reward variance (0 disables).
    pub converge_patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_coeff: 0.01,
            learning_rate: 0.5,
            epochs: 40,
            max_steps_budget: usize::MAX,
            batch_contexts: 4,
            updates_per_batch: 1,
            optimizer: OptimizerKind::Sgd,
            max_error_rate: 0.5,
            converge_patience: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid training config: {0}")]
pub struct ConfigError(pub String);

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.group_size < 2 {
            return Err(ConfigError("group_size must be at least 2".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(ConfigError("clip_epsilon must lie in (0, 1)".into()));
        }
        if !self.kl_coeff.is_finite() || self.kl_coeff < 0.0 {
            return Err(ConfigError("kl_coeff must be finite and non-negative".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(ConfigError("learning_rate must be finite and positive".into()));
        }
        if self.batch_contexts == 0 || self.updates_per_batch == 0 {
            return Err(ConfigError("batch_contexts and updates_per_batch must be positive".into()));
        }
        Ok(())
    }

    /// Iterations actually run: `epochs` capped by the step budget.
    pub fn planned_steps(&self) -> usize {
        self.epochs.min(self.max_steps_budget)
    }
}

/// `G` outputs sampled for one context, with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch<F> {
    pub context: usize,
    pub outputs: Vec<Vec<Choice>>,
    pub rewards: Vec<F>,
    pub advantages: Vec<F>,
}

impl<F: Scalar> GroupBatch<F> {
    pub fn new(context: usize, outputs: Vec<Vec<Choice>>, rewards: Vec<F>) -> Result<Self, GrpoError> {
        assert_eq!(outputs.len(), rewards.len(), "one reward per output");
        let advantages = compute_advantages(&rewards)?;
        Ok(Self {
            context,
            outputs,
            rewards,
            advantages,
        })
    }

    pub fn size(&self) -> usize {
        self.outputs.len()
    }
}

/// Loss (negated objective) and its gradient with respect to the current logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput<F> {
    pub loss: F,
    /// Mean per-step KL to the reference policy.
    pub kl: F,
    pub grad: Vec<F>,
    /// Fraction of steps whose clipped branch was active.
    pub clip_fraction: F,
}

/// Clipped group-relative surrogate and its analytic gradient.
///
/// `old` is the sampling-time snapshot defining the importance ratios and
/// `reference` anchors the KL penalty. The objective is averaged over steps
/// within an output, then over the outputs of a group, then over groups.
pub fn surrogate_loss<F: Scalar>(
    batches: &[GroupBatch<F>],
    current: &CategoricalPolicy<F>,
    old: &CategoricalPolicy<F>,
    reference: &CategoricalPolicy<F>,
    cfg: &TrainingConfig,
) -> Result<SurrogateOutput<F>, GrpoError> {
    if batches.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let eps = F::lit(cfg.clip_epsilon);
    let beta = F::lit(cfg.kl_coeff);
    let (lo, hi) = (F::one() - eps, F::one() + eps);
    let mut grad = vec![F::zero(); current.num_params()];
    let mut objective = F::zero();
    let mut kl_total = F::zero();
    let mut steps = 0usize;
    let mut clipped = 0usize;
    let batch_weight = F::one() / F::lit(batches.len() as f64);

    for batch in batches {
        let group_weight = batch_weight / F::lit(batch.size() as f64);
        for (output, &adv) in batch.outputs.iter().zip(&batch.advantages) {
            if output.is_empty() {
                continue;
            }
            let w = group_weight / F::lit(output.len() as f64);
            for choice in output {
                let row = choice.row as usize;
                let a = choice.action as usize;
                let lp = current.log_probs(row, choice.mask);
                let lp_old = old.log_probs(row, choice.mask)[a];
                let ratio = (lp[a] - lp_old).exp();
                let clipped_ratio = ratio.max(lo).min(hi);
                let unclipped_active = ratio * adv <= clipped_ratio * adv;
                let surrogate = if unclipped_active { ratio * adv } else { clipped_ratio * adv };
                if !unclipped_active {
                    clipped += 1;
                }

                let offset = current.offset(row);
                let probs: Vec<F> = lp.iter().map(|&l| l.exp()).collect();
                let mut kl = F::zero();
                if cfg.kl_coeff > 0.0 {
                    let lq = reference.log_probs(row, choice.mask);
                    for j in 0..probs.len() {
                        if choice.mask.allows(j) {
                            kl = kl + probs[j] * (lp[j] - lq[j]);
                        }
                    }
                    for j in 0..probs.len() {
                        if choice.mask.allows(j) {
                            let d_kl = probs[j] * (lp[j] - lq[j] - kl);
                            grad[offset + j] = grad[offset + j] + w * beta * d_kl;
                        }
                    }
                }
                if unclipped_active && adv != F::zero() {
                    for j in 0..probs.len() {
                        if choice.mask.allows(j) {
                            let indicator = if j == a { F::one() } else { F::zero() };
                            let d_ratio = ratio * (indicator - probs[j]);
                            grad[offset + j] = grad[offset + j] - w * adv * d_ratio;
                        }
                    }
                }
                objective = objective + w * (surrogate - beta * kl);
                kl_total = kl_total + kl;
                steps += 1;
            }
        }
    }
    let loss = -objective;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFiniteLoss);
    }
    let denom = F::lit(steps.max(1) as f64);
    Ok(SurrogateOutput {
        loss,
        kl: kl_total / denom,
        grad,
        clip_fraction: F::lit(clipped as f64) / denom,
    })
}

/// First-order optimizer state for descending the surrogate loss.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    learning_rate: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        Self {
            kind,
            learning_rate: F::lit(learning_rate),
            m: vec![F::zero(); num_params],
            v: vec![F::zero(); num_params],
            t: 0,
        }
    }

    /// Applies one descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = *p - self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (F::lit(0.9), F::lit(0.999), F::lit(1e-8));
                self.t += 1;
                let c1 = F::one() - b1.powi(self.t);
                let c2 = F::one() - b2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = b1 * self.m[i] + (F::one() - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (F::one() - b2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] = params[i] - self.learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

pub fn l2_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}
