//! The outer loop: a grammar policy over reward expressions trained by GRPO
//! on the validation scores of inner runs.

mod evolve;
pub mod graph;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_with_primitives, ParseError, StructureClass};
pub use crate::dsl::{Derivation, Grammar, MetaParams};
use crate::grpo::{surrogate_loss, CategoricalPolicy, Choice, GroupBatch, GrpoError, Optimizer, OptimizerKind, TrainingConfig};
use crate::inner::InnerRunResult;
pub use evolve::{
    evolve, population_schedule, BestRecord, EvolveMode, EvolveOutput, EvolveSettings, RolloutTiming, RunManifest, StepTiming,
};

/// Built-in exemplar expressions used for the supervised warm-up.
pub const DEFAULT_EXEMPLARS: &str = include_str!("../../data/exemplars.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdStartConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the corpus mean log-probability improves by less than this.
    pub tolerance: f64,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_epochs: 5000,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartReport {
    /// Expressions fitted (after snapping constants to the vocabulary).
    pub fitted: Vec<String>,
    /// Parseable expressions the grammar cannot derive.
    pub skipped: Vec<String>,
    pub epochs: usize,
    pub initial_mean_log_prob: f64,
    pub final_mean_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("exemplar corpus has unparseable lines: {}", format_lines(.0))]
pub struct CorpusError(pub Vec<(usize, String, ParseError)>);

fn format_lines(lines: &[(usize, String, ParseError)]) -> String {
    lines
        .iter()
        .map(|(n, text, e)| format!("line {n} `{text}`: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Mean over `derivations` of the summed log-probability gradient.
fn mean_log_likelihood_grad(policy: &CategoricalPolicy<f64>, derivations: &[Vec<Choice>]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; policy.num_params()];
    let mut total = 0.0;
    let w = 1.0 / derivations.len() as f64;
    for choices in derivations {
        for c in choices {
            let (row, a) = (c.row as usize, c.action as usize);
            let lp = policy.log_probs(row, c.mask);
            total += w * lp[a];
            let off = policy.offset(row);
            for (j, l) in lp.iter().enumerate() {
                if c.mask.allows(j) {
                    let ind = if j == a { 1.0 } else { 0.0 };
                    grad[off + j] += w * (ind - l.exp());
                }
            }
        }
    }
    (total, grad)
}

/// Supervised warm-up: full-batch gradient ascent on the mean derivation
/// log-likelihood of `corpus` (one expression per entry, `line` numbers are
/// 1-based for diagnostics). Constants are snapped to the grammar's
/// vocabulary first; expressions the grammar still cannot derive are
/// skipped and reported.
pub fn cold_start(
    meta: &MetaParams,
    corpus: &[(usize, String)],
    cfg: &ColdStartConfig,
) -> Result<(MetaParams, ColdStartReport), CorpusError> {
    let mut bad = Vec::new();
    let mut parsed = Vec::new();
    for (line, text) in corpus {
        match parse_with_primitives(text, meta.grammar.num_primitives) {
            Ok(e) => parsed.push(e),
            Err(e) => bad.push((*line, text.clone(), e)),
        }
    }
    if !bad.is_empty() {
        return Err(CorpusError(bad));
    }
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    let mut derivations = Vec::new();
    for e in &parsed {
        let snapped = meta.snap_constants(e);
        match meta.derive(&snapped) {
            Some(d) => {
                fitted.push(snapped.to_text());
                derivations.push(d);
            }
            None => skipped.push(e.to_text()),
        }
    }
    let mut out = meta.clone();
    if derivations.is_empty() {
        return Ok((
            out,
            ColdStartReport {
                fitted,
                skipped,
                epochs: 0,
                initial_mean_log_prob: 0.0,
                final_mean_log_prob: 0.0,
            },
        ));
    }
    let (initial, mut grad) = mean_log_likelihood_grad(&out.logits, &derivations);
    let mut current = initial;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        for (p, g) in out.logits.params_mut().iter_mut().zip(&grad) {
            *p += cfg.learning_rate * g;
        }
        epochs += 1;
        let (next, next_grad) = mean_log_likelihood_grad(&out.logits, &derivations);
        let improvement = next - current;
        current = next;
        grad = next_grad;
        if improvement < cfg.tolerance {
            break;
        }
    }
    Ok((
        out,
        ColdStartReport {
            fitted,
            skipped,
            epochs,
            initial_mean_log_prob: initial,
            final_mean_log_prob: current,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    /// Expressions sampled (and inner runs launched) per outer step.
    pub rollouts: usize,
    pub epochs: usize,
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            rollouts: 8,
            epochs: 10,
            clip_epsilon: 0.2,
            kl_coeff: 0.01,
            learning_rate: 1.0,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rollouts < 2 {
            return Err("outer.rollouts must be at least 2".into());
        }
        if self.epochs == 0 {
            return Err("outer.epochs must be positive".into());
        }
        self.training_config().validate().map_err(|e| e.0)
    }

    fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            group_size: self.rollouts,
            clip_epsilon: self.clip_epsilon,
            kl_coeff: self.kl_coeff,
            learning_rate: self.learning_rate,
            optimizer: OptimizerKind::Sgd,
            ..TrainingConfig::default()
        }
    }
}

/// Outer reward of one sampled expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutScore {
    pub v: f64,
    pub test_v: f64,
    pub valid: bool,
    pub steps_used: usize,
}

impl From<&InnerRunResult> for RolloutScore {
    fn from(r: &InnerRunResult) -> Self {
        Self {
            v: r.v,
            test_v: r.test_v,
            valid: r.is_valid(),
            steps_used: r.steps_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutEntry {
    pub expr: String,
    pub valid: bool,
    pub class: StructureClass,
    pub v: f64,
    pub test_v: f64,
    pub steps_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStepRecord {
    pub step: usize,
    pub entries: Vec<RolloutEntry>,
    pub advantages: Vec<f64>,
    pub mean_v: f64,
    pub mean_test_v: f64,
    /// Set when the update was skipped; the meta parameters are unchanged.
    pub failure: Option<String>,
}

impl OuterStepRecord {
    /// Fractions of (stable, unstable, invalid) structures.
    pub fn class_fractions(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for e in &self.entries {
            counts[e.class as usize] += 1;
        }
        let n = self.entries.len().max(1) as f64;
        counts.map(|c| c as f64 / n)
    }
}

/// One GRPO step on the grammar logits. Each derivation is an output whose
/// steps are its production choices; `rewards` are the validation scores.
/// Returns the updated parameters and the group advantages.
pub fn outer_update(
    meta: &MetaParams,
    reference: &CategoricalPolicy<f64>,
    derivations: &[Derivation],
    rewards: &[f64],
    cfg: &OuterConfig,
) -> Result<(MetaParams, Vec<f64>), GrpoError> {
    let outputs = derivations.iter().map(|d| d.choices.clone()).collect();
    let batch = GroupBatch::new(0, outputs, rewards.to_vec())?;
    let advantages = batch.advantages.clone();
    let tc = OuterConfig {
        rollouts: derivations.len(),
        ..cfg.clone()
    }
    .training_config();
    let out = surrogate_loss(&[batch], &meta.logits, &meta.logits, reference, &tc)?;
    let mut next = meta.clone();
    Optimizer::new(OptimizerKind::Sgd, meta.learning_rate, next.logits.num_params()).step(next.logits.params_mut(), &out.grad);
    if !next.is_finite() {
        return Err(GrpoError::NonFiniteLoss);
    }
    Ok((next, advantages))
}

/// Samples `cfg.rollouts` expressions, scores them with `evaluate` (which
/// must return one score per derivation, in order) and applies one update.
/// Invalid expressions stay in the group with `v = 0`. If the update fails
/// the returned meta is unchanged and the record carries the failure.
pub fn outer_step<R, E>(
    meta: &MetaParams,
    reference: &CategoricalPolicy<f64>,
    step: usize,
    cfg: &OuterConfig,
    rng: &mut R,
    evaluate: E,
) -> (MetaParams, OuterStepRecord, Vec<Derivation>)
where
    R: Rng + ?Sized,
    E: FnOnce(&[Derivation]) -> Vec<RolloutScore>,
{
    let derivations: Vec<Derivation> = (0..cfg.rollouts).map(|_| meta.sample(rng)).collect();
    let scores = evaluate(&derivations);
    assert_eq!(scores.len(), derivations.len(), "one score per derivation");
    let entries: Vec<RolloutEntry> = derivations
        .iter()
        .zip(&scores)
        .map(|(d, s)| RolloutEntry {
            expr: d.text.clone(),
            valid: s.valid,
            class: d.expr.classify(),
            v: if s.valid { s.v } else { 0.0 },
            test_v: if s.valid { s.test_v } else { 0.0 },
            steps_used: s.steps_used,
        })
        .collect();
    let rewards: Vec<f64> = entries.iter().map(|e| e.v).collect();
    let n = entries.len() as f64;
    let mean_v = rewards.iter().sum::<f64>() / n;
    let mean_test_v = entries.iter().map(|e| e.test_v).sum::<f64>() / n;
    let (next, advantages, failure) = match outer_update(meta, reference, &derivations, &rewards, cfg) {
        Ok((next, adv)) => (next, adv, None),
        Err(e) => (meta.clone(), vec![0.0; entries.len()], Some(e.to_string())),
    };
    let record = OuterStepRecord {
        step,
        entries,
        advantages,
        mean_v,
        mean_test_v,
        failure,
    };
    (next, record, derivations)
}
