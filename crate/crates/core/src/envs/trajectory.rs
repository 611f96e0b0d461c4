use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Decode, EnvError, Environment, SplitLevel, SplitSet};
use crate::grpo::{CategoricalPolicy, Choice};
use crate::primitives::{TrajectoryOutput, TrajectoryStep};
use crate::Scalar;

pub const NUM_ACTIONS: usize = 7;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["up", "down", "left", "right", "pickup", "place", "toggle"];
const FIRST_INTERACT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubgoalKind {
    Pickup,
    Place,
    Toggle,
}

impl SubgoalKind {
    pub const ALL: [SubgoalKind; 3] = [SubgoalKind::Pickup, SubgoalKind::Place, SubgoalKind::Toggle];

    /// The interaction action that completes a subgoal of this kind.
    pub fn action(self) -> usize {
        FIRST_INTERACT + self as usize
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryEnvSpec {
    pub grid_size: usize,
    pub num_subgoals: usize,
    pub horizon: usize,
    pub num_task_types: usize,
    pub variants_per_type: usize,
    pub starts_per_variant: usize,
    pub split_seed: u64,
    /// Landscape knob: place consecutive targets at least `grid_size - 1`
    /// apart, so that complete successes are rare under an untrained policy
    /// and per-subgoal progress carries most of the learning signal.
    pub spread_targets: bool,
}

impl Default for TrajectoryEnvSpec {
    fn default() -> Self {
        Self {
            grid_size: 4,
            num_subgoals: 2,
            horizon: 12,
            num_task_types: 6,
            variants_per_type: 4,
            starts_per_variant: 4,
            split_seed: 0,
            spread_targets: false,
        }
    }
}

impl TrajectoryEnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if self.grid_size < 2 {
            return err("grid_size must be at least 2");
        }
        if self.num_subgoals == 0 {
            return err("num_subgoals must be positive");
        }
        if self.horizon < 3 * self.num_subgoals {
            return err("horizon must be at least 3 * num_subgoals");
        }
        if self.num_task_types == 0 || self.num_task_types > 6 {
            return err("num_task_types must be in 1..=6");
        }
        if self.variants_per_type == 0 {
            return err("variants_per_type must be positive");
        }
        if self.starts_per_variant < 3 {
            return err("starts_per_variant must be at least 3");
        }
        if self.starts_per_variant > self.grid_size * self.grid_size {
            return err("starts_per_variant exceeds the number of cells");
        }
        Ok(())
    }
}

/// Ordered subgoal kinds of a task type. Types differ in their kind order.
pub fn type_pattern(task_type: usize, num_subgoals: usize) -> Vec<SubgoalKind> {
    let stride = 1 + task_type / 3;
    (0..num_subgoals).map(|j| SubgoalKind::ALL[(task_type + j * stride) % 3]).collect()
}

/// One task instance: a layout of ordered subgoal targets and a start cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectoryTask {
    pub task_type: usize,
    pub variant: usize,
    pub start: Cell,
    pub targets: Vec<Cell>,
    pub kinds: Vec<SubgoalKind>,
}

impl TrajectoryTask {
    /// Fewest steps that complete every subgoal.
    pub fn optimal_length(&self) -> usize {
        let mut pos = self.start;
        let mut total = 0;
        for &t in &self.targets {
            total += manhattan(pos, t) + 1;
            pos = t;
        }
        total
    }
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: Cell,
    /// Index of the next pending subgoal.
    pub next: usize,
    pub t: usize,
    pub done: bool,
}

impl EnvState {
    pub fn success(&self, task: &TrajectoryTask) -> bool {
        self.next == task.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnv {
    spec: TrajectoryEnvSpec,
}

impl TrajectoryEnv {
    pub fn new(spec: TrajectoryEnvSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &TrajectoryEnvSpec {
        &self.spec
    }

    pub fn reset(&self, task: &TrajectoryTask) -> EnvState {
        EnvState {
            pos: task.start,
            next: 0,
            t: 0,
            done: false,
        }
    }

    /// Deterministic transition. Returns the next state, the step reward
    /// (1 iff the action completed the next pending subgoal) and `done`.
    /// Unknown action ids are no-ops with reward 0.
    pub fn step(&self, task: &TrajectoryTask, state: &EnvState, action: usize) -> (EnvState, u8, bool) {
        assert!(!state.done, "step called on a finished episode");
        let n = self.spec.grid_size;
        let mut s = *state;
        let mut reward = 0;
        let (x, y) = s.pos;
        match action {
            0 => s.pos = (x, y.saturating_sub(1)),
            1 => s.pos = (x, (y + 1).min(n - 1)),
            2 => s.pos = (x.saturating_sub(1), y),
            3 => s.pos = ((x + 1).min(n - 1), y),
            a if (FIRST_INTERACT..NUM_ACTIONS).contains(&a)
                && s.next < task.targets.len()
                && s.pos == task.targets[s.next]
                && task.kinds[s.next].action() == a =>
            {
                s.next += 1;
                reward = 1;
            }
            _ => {}
        }
        s.t += 1;
        s.done = s.next == task.targets.len() || s.t >= self.spec.horizon;
        (s, reward, s.done)
    }

    /// Policy row for a state: sign of the offset to the pending target
    /// (3 x 3) and the pending subgoal kind.
    pub fn feature_row(&self, task: &TrajectoryTask, state: &EnvState) -> usize {
        let target = task.targets[state.next];
        let sign = |a: usize, b: usize| match a.cmp(&b) {
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => 1,
            std::cmp::Ordering::Greater => 2,
        };
        let sx = sign(target.0, state.pos.0);
        let sy = sign(target.1, state.pos.1);
        (sx * 3 + sy) * 3 + task.kinds[state.next] as usize
    }

    pub const NUM_ROWS: usize = 27;

    /// Exhaustive search over action sequences up to the horizon; returns a
    /// shortest successful sequence. Exponential, intended for tiny instances.
    pub fn solve_bruteforce(&self, task: &TrajectoryTask) -> Option<Vec<usize>> {
        for len in 1..=self.spec.horizon {
            let mut seq = Vec::with_capacity(len);
            if self.search(task, self.reset(task), len, &mut seq) {
                return Some(seq);
            }
        }
        None
    }

    fn search(&self, task: &TrajectoryTask, state: EnvState, remaining: usize, seq: &mut Vec<usize>) -> bool {
        if state.success(task) {
            return remaining == 0;
        }
        if remaining == 0 || state.done {
            return false;
        }
        for a in 0..NUM_ACTIONS {
            let (next, _, _) = self.step(task, &state, a);
            seq.push(a);
            if self.search(task, next, remaining - 1, seq) {
                return true;
            }
            seq.pop();
        }
        false
    }

    /// Replays an action sequence, returning the output it produces.
    pub fn replay(&self, task: &TrajectoryTask, actions: &[usize]) -> TrajectoryOutput {
        let mut state = self.reset(task);
        let mut steps = Vec::new();
        for &a in actions {
            if state.done {
                break;
            }
            let (next, reward, _) = self.step(task, &state, a);
            steps.push(TrajectoryStep { action: a, reward });
            state = next;
        }
        TrajectoryOutput {
            steps,
            success: state.success(task),
        }
    }

    fn random_cell(&self, rng: &mut ChaCha8Rng) -> Cell {
        let n = self.spec.grid_size;
        (rng.gen_range(0..n), rng.gen_range(0..n))
    }

    fn layout(&self, rng: &mut ChaCha8Rng) -> Vec<Cell> {
        let min_gap = if self.spec.spread_targets { self.spec.grid_size - 1 } else { 0 };
        let mut targets: Vec<Cell> = Vec::with_capacity(self.spec.num_subgoals);
        while targets.len() < self.spec.num_subgoals {
            let c = self.random_cell(rng);
            if targets.last().is_none_or(|&p| manhattan(p, c) >= min_gap.max(1)) {
                targets.push(c);
            }
        }
        targets
    }

    /// All contexts of one task type, grouped by variant.
    fn generate_type(&self, task_type: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TrajectoryTask>> {
        let kinds = type_pattern(task_type, self.spec.num_subgoals);
        let mut variants = Vec::with_capacity(self.spec.variants_per_type);
        let mut seen_layouts = BTreeSet::new();
        let mut attempts = 0usize;
        while variants.len() < self.spec.variants_per_type {
            attempts += 1;
            let targets = self.layout(rng);
            if !seen_layouts.insert(targets.clone()) && attempts < 10_000 {
                continue;
            }
            let mut cells: Vec<Cell> = (0..self.spec.grid_size)
                .flat_map(|x| (0..self.spec.grid_size).map(move |y| (x, y)))
                .collect();
            cells.shuffle(rng);
            let variant = variants.len();
            let starts: Vec<TrajectoryTask> = cells
                .into_iter()
                .map(|start| TrajectoryTask {
                    task_type,
                    variant,
                    start,
                    targets: targets.clone(),
                    kinds: kinds.clone(),
                })
                .filter(|t| t.optimal_length() <= self.spec.horizon)
                .take(self.spec.starts_per_variant)
                .collect();
            if starts.len() == self.spec.starts_per_variant {
                variants.push(starts);
            } else {
                seen_layouts.remove(&targets);
            }
        }
        variants
    }

    /// Deterministic splits for `level`, driven by `split_seed`.
    pub fn generate_splits(&self, level: SplitLevel) -> Result<SplitSet<TrajectoryTask>, EnvError> {
        let types = self.spec.num_task_types;
        if level == SplitLevel::L2 && types < 2 {
            return Err(EnvError::InvalidSpec("L2 splits need at least 2 task types".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.split_seed);
        let mut order: Vec<usize> = (0..types).collect();
        order.shuffle(&mut rng);
        let held_out: BTreeSet<usize> = order.iter().take(types.div_ceil(3)).copied().collect();
        let unseen_variants = self.spec.variants_per_type.div_ceil(4);

        let mut split = SplitSet {
            level,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for t in 0..types {
            let variants = self.generate_type(t, &mut rng);
            let v_total = variants.len();
            for (v, starts) in variants.into_iter().enumerate() {
                let to_test = match level {
                    SplitLevel::L0 => false,
                    SplitLevel::L1 => v_total > 1 && v >= v_total - unseen_variants,
                    SplitLevel::L2 => held_out.contains(&t),
                };
                if to_test {
                    split.test.extend(starts);
                    continue;
                }
                let s = starts.len();
                for (i, task) in starts.into_iter().enumerate() {
                    if i == s - 1 && level == SplitLevel::L0 {
                        split.test.push(task);
                    } else if i == s - 2 || (i == s - 1 && level != SplitLevel::L0) {
                        split.validation.push(task);
                    } else {
                        split.train.push(task);
                    }
                }
            }
        }
        Ok(split)
    }
}

impl Environment for TrajectoryEnv {
    type Context = TrajectoryTask;
    type Output = TrajectoryOutput;

    fn policy_shape(&self) -> Vec<usize> {
        vec![NUM_ACTIONS; Self::NUM_ROWS]
    }

    fn rollout<F: Scalar>(
        &self,
        policy: &CategoricalPolicy<F>,
        task: &TrajectoryTask,
        mut decode: Decode<'_>,
    ) -> (TrajectoryOutput, Vec<Choice>) {
        let mut state = self.reset(task);
        let mut steps = Vec::with_capacity(self.spec.horizon);
        let mut choices = Vec::with_capacity(self.spec.horizon);
        while !state.done {
            let row = self.feature_row(task, &state);
            let action = decode.pick(policy, row);
            let (next, reward, _) = self.step(task, &state, action);
            choices.push(Choice::new(row, action));
            steps.push(TrajectoryStep { action, reward });
            state = next;
        }
        let output = TrajectoryOutput {
            steps,
            success: state.success(task),
        };
        (output, choices)
    }

    fn success(&self, output: &TrajectoryOutput, _: &TrajectoryTask) -> bool {
        output.success
    }
}
