use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{l2_norm, surrogate_loss, CategoricalPolicy, Choice, GroupBatch, GrpoError, Optimizer, TrainingConfig};
use crate::dsl::EvalError;
use crate::Scalar;

/// Produces outputs for training contexts under a policy.
pub trait RolloutSampler<F: Scalar> {
    type Context;
    type Output;

    fn contexts(&self) -> &[Self::Context];

    /// Samples one output and the choices that produced it.
    fn sample(&self, policy: &CategoricalPolicy<F>, context: &Self::Context, rng: &mut ChaCha8Rng) -> (Self::Output, Vec<Choice>);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub reward_errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Ran the planned number of iterations.
    Completed,
    /// Stopped by the hard step budget before `epochs` iterations.
    BudgetExhausted,
    /// Every group had constant rewards for `converge_patience` iterations.
    Converged,
    /// Reward evaluation failed for more than `max_error_rate` of the
    /// samples in the given iteration.
    RewardErrors { step: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub policy: CategoricalPolicy<F>,
    pub log: Vec<StepLog>,
    pub stop: StopReason,
    /// Iterations whose update was applied.
    pub steps_completed: usize,
}

/// Trains `policy` by repeated sample-group, score, standardize, ascend.
///
/// Failed reward evaluations count as reward 0. Fully deterministic given
/// `cfg.seed`: contexts, outputs and updates are produced in a fixed order.
pub fn train<F, S, R>(
    policy: CategoricalPolicy<F>,
    sampler: &S,
    mut reward_fn: R,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome<F>, GrpoError>
where
    F: Scalar,
    S: RolloutSampler<F>,
    R: FnMut(&S::Output, &S::Context) -> Result<F, EvalError>,
{
    let contexts = sampler.contexts();
    if contexts.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = policy.clone();
    let mut policy = policy;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, policy.num_params());
    let mut log = Vec::new();
    let mut flat_streak = 0usize;
    let planned = cfg.planned_steps();

    for step in 0..planned {
        let old = policy.clone();
        let mut batches = Vec::with_capacity(cfg.batch_contexts);
        let mut errors = 0usize;
        let mut reward_sum = F::zero();
        for _ in 0..cfg.batch_contexts {
            let ci = rng.gen_range(0..contexts.len());
            let ctx = &contexts[ci];
            let mut outputs = Vec::with_capacity(cfg.group_size);
            let mut rewards = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let (out, choices) = sampler.sample(&old, ctx, &mut rng);
                let r = match reward_fn(&out, ctx) {
                    Ok(r) => r,
                    Err(_) => {
                        errors += 1;
                        F::zero()
                    }
                };
                reward_sum = reward_sum + r;
                outputs.push(choices);
                rewards.push(r);
            }
            batches.push(GroupBatch::new(ci, outputs, rewards)?);
        }
        let samples = cfg.batch_contexts * cfg.group_size;
        if errors as f64 > cfg.max_error_rate * samples as f64 {
            return Ok(TrainOutcome {
                policy,
                log,
                stop: StopReason::RewardErrors { step },
                steps_completed: step,
            });
        }

        let mut last = None;
        for _ in 0..cfg.updates_per_batch {
            let out = surrogate_loss(&batches, &policy, &old, &reference, cfg)?;
            optimizer.step(policy.params_mut(), &out.grad);
            last = Some(out);
        }
        let last = last.expect("updates_per_batch >= 1");
        log.push(StepLog {
            step,
            mean_reward: (reward_sum / F::lit(samples as f64)).as_f64(),
            loss: last.loss.as_f64(),
            kl: last.kl.as_f64(),
            grad_norm: l2_norm(&last.grad).as_f64(),
            reward_errors: errors,
        });

        if cfg.converge_patience > 0 {
            let flat = batches.iter().all(|b| b.advantages.iter().all(|a| *a == F::zero()));
            flat_streak = if flat { flat_streak + 1 } else { 0 };
            if flat_streak >= cfg.converge_patience {
                return Ok(TrainOutcome {
                    policy,
                    log,
                    stop: StopReason::Converged,
                    steps_completed: step + 1,
                });
            }
        }
    }

    let stop = if cfg.epochs > planned {
        StopReason::BudgetExhausted
    } else {
        StopReason::Completed
    };
    Ok(TrainOutcome {
        policy,
        log,
        stop,
        steps_completed: planned,
    })
}

pub const STEP_LOG_HEADER: &str = "step,mean_reward,loss,kl,grad_norm";

/// Writes the step log as CSV with a schema line and fixed header.
pub fn write_step_log_csv<W: Write>(log: &[StepLog], mut w: W) -> io::Result<()> {
    writeln!(w, "# schema_version={}", crate::SCHEMA_VERSION)?;
    writeln!(w, "{STEP_LOG_HEADER}")?;
    for s in log {
        writeln!(w, "{},{},{},{},{}", s.step, s.mean_reward, s.loss, s.kl, s.grad_norm)?;
    }
    Ok(())
}
