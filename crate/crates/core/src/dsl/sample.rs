//! Weighted-grammar generation of reward expressions.
//!
//! A derivation is generated top-down in pre-order. Every node at depth
//! level `d` (root is level 0) first picks a node kind, then an operator,
//! a primitive or a constant from the logit rows of its level. At the
//! last level only leaves are eligible, so every derivation terminates
//! within `max_depth` and parses by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ast::{BinaryOp, Expr, RewardExpr};
use crate::grpo::{CategoricalPolicy, Choice, Mask, PolicyRole};

/// Constant vocabulary available to generated expressions.
pub const DEFAULT_CONSTANTS: [f64; 9] = [0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 1.0, 2.0, 3.0];

pub const DEFAULT_MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Primitive = 0,
    Constant = 1,
    Neg = 2,
    Binary = 3,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [NodeKind::Primitive, NodeKind::Constant, NodeKind::Neg, NodeKind::Binary];
}

const ROWS_PER_LEVEL: usize = 4;
const KIND_ROW: usize = 0;
const OP_ROW: usize = 1;
const PRIM_ROW: usize = 2;
const CONST_ROW: usize = 3;

/// Shape of the generation grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grammar {
    pub max_depth: usize,
    pub num_primitives: usize,
    pub constants: Vec<f64>,
    pub ops: Vec<BinaryOp>,
}

impl Default for Grammar {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            num_primitives: 4,
            constants: DEFAULT_CONSTANTS.to_vec(),
            ops: BinaryOp::ALL.to_vec(),
        }
    }
}

impl Grammar {
    fn row_widths(&self) -> Vec<usize> {
        let level = [
            NodeKind::ALL.len(),
            self.ops.len().max(1),
            self.num_primitives.max(1),
            self.constants.len().max(1),
        ];
        (0..self.max_depth).flat_map(|_| level).collect()
    }

    fn row(&self, level: usize, group: usize) -> usize {
        level * ROWS_PER_LEVEL + group
    }

    fn kind_mask(&self, level: usize) -> Mask {
        let mut allowed = Vec::with_capacity(4);
        if self.num_primitives > 0 {
            allowed.push(NodeKind::Primitive as usize);
        }
        if !self.constants.is_empty() {
            allowed.push(NodeKind::Constant as usize);
        }
        if level + 1 < self.max_depth {
            allowed.push(NodeKind::Neg as usize);
            if !self.ops.is_empty() {
                allowed.push(NodeKind::Binary as usize);
            }
        }
        Mask::only(&allowed)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 {
            return Err("max_depth must be positive".into());
        }
        if self.num_primitives == 0 && self.constants.is_empty() {
            return Err("grammar needs primitives or constants to terminate".into());
        }
        if self.num_primitives > super::MAX_PRIMITIVES {
            return Err(format!("at most {} primitives are addressable", super::MAX_PRIMITIVES));
        }
        if self.constants.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err("constants must be finite and non-negative".into());
        }
        if self.ops.len() > 64 || self.constants.len() > 64 {
            return Err("at most 64 operators and constants".into());
        }
        Ok(())
    }
}

/// Parameters of the expression-generating policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub grammar: Grammar,
    pub logits: CategoricalPolicy<f64>,
    pub learning_rate: f64,
}

/// A sampled expression with the choices that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub expr: RewardExpr,
    pub text: String,
    pub choices: Vec<Choice>,
    pub log_prob: f64,
}

impl MetaParams {
    /// Uniform logits over the grammar.
    pub fn uniform(grammar: Grammar, learning_rate: f64) -> Self {
        let logits = CategoricalPolicy::uniform(grammar.row_widths(), PolicyRole::Meta);
        Self {
            grammar,
            logits,
            learning_rate,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.logits.is_finite()
    }

    pub fn kind_logits_mut(&mut self, level: usize) -> &mut [f64] {
        let row = self.grammar.row(level, KIND_ROW);
        self.logits.row_logits_mut(row)
    }

    pub fn op_logits_mut(&mut self, level: usize) -> &mut [f64] {
        let row = self.grammar.row(level, OP_ROW);
        self.logits.row_logits_mut(row)
    }

    pub fn primitive_logits_mut(&mut self, level: usize) -> &mut [f64] {
        let row = self.grammar.row(level, PRIM_ROW);
        self.logits.row_logits_mut(row)
    }

    pub fn constant_logits_mut(&mut self, level: usize) -> &mut [f64] {
        let row = self.grammar.row(level, CONST_ROW);
        self.logits.row_logits_mut(row)
    }

    /// Samples one derivation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Derivation {
        let mut choices = Vec::new();
        let root = self.sample_node(0, rng, &mut choices);
        let log_prob = self.logits.sequence_log_prob(&choices);
        let expr = RewardExpr::new(root);
        Derivation {
            text: expr.to_text(),
            expr,
            choices,
            log_prob,
        }
    }

    fn pick<R: Rng + ?Sized>(&self, row: usize, mask: Mask, rng: &mut R, choices: &mut Vec<Choice>) -> usize {
        let a = self.logits.sample(row, mask, rng);
        choices.push(Choice::masked(row, a, mask));
        a
    }

    fn sample_node<R: Rng + ?Sized>(&self, level: usize, rng: &mut R, choices: &mut Vec<Choice>) -> Expr {
        let g = &self.grammar;
        let kind = self.pick(g.row(level, KIND_ROW), g.kind_mask(level), rng, choices);
        match NodeKind::ALL[kind] {
            NodeKind::Primitive => {
                let k = self.pick(g.row(level, PRIM_ROW), Mask::ALL, rng, choices);
                Expr::Primitive(k + 1)
            }
            NodeKind::Constant => {
                let c = self.pick(g.row(level, CONST_ROW), Mask::ALL, rng, choices);
                Expr::Constant(g.constants[c])
            }
            NodeKind::Neg => Expr::neg(self.sample_node(level + 1, rng, choices)),
            NodeKind::Binary => {
                let op = self.pick(g.row(level, OP_ROW), Mask::ALL, rng, choices);
                let left = self.sample_node(level + 1, rng, choices);
                let right = self.sample_node(level + 1, rng, choices);
                Expr::binary(g.ops[op], left, right)
            }
        }
    }

    /// The unique choice sequence generating `expr`, if the grammar can.
    pub fn derive(&self, expr: &RewardExpr) -> Option<Vec<Choice>> {
        let mut choices = Vec::new();
        self.derive_node(expr.root(), 0, &mut choices)?;
        Some(choices)
    }

    fn derive_node(&self, node: &Expr, level: usize, out: &mut Vec<Choice>) -> Option<()> {
        let g = &self.grammar;
        if level >= g.max_depth {
            return None;
        }
        let mask = g.kind_mask(level);
        let push_kind = |kind: NodeKind, out: &mut Vec<Choice>| -> Option<()> {
            mask.allows(kind as usize)
                .then(|| out.push(Choice::masked(g.row(level, KIND_ROW), kind as usize, mask)))
        };
        match node {
            Expr::Primitive(k) => {
                push_kind(NodeKind::Primitive, out)?;
                if *k == 0 || *k > g.num_primitives {
                    return None;
                }
                out.push(Choice::new(g.row(level, PRIM_ROW), k - 1));
            }
            Expr::Constant(c) => {
                push_kind(NodeKind::Constant, out)?;
                let idx = g.constants.iter().position(|x| x == c)?;
                out.push(Choice::new(g.row(level, CONST_ROW), idx));
            }
            Expr::Neg(child) => {
                push_kind(NodeKind::Neg, out)?;
                self.derive_node(child, level + 1, out)?;
            }
            Expr::Binary(op, l, r) => {
                push_kind(NodeKind::Binary, out)?;
                let idx = g.ops.iter().position(|x| x == op)?;
                out.push(Choice::new(g.row(level, OP_ROW), idx));
                self.derive_node(l, level + 1, out)?;
                self.derive_node(r, level + 1, out)?;
            }
        }
        Some(())
    }

    /// Log-probability of generating `expr`, `None` if it is not derivable.
    pub fn log_prob(&self, expr: &RewardExpr) -> Option<f64> {
        self.derive(expr).map(|c| self.logits.sequence_log_prob(&c))
    }

    /// Replaces every constant by the nearest vocabulary constant
    /// (in log space; zero maps to the smallest constant).
    pub fn snap_constants(&self, expr: &RewardExpr) -> RewardExpr {
        RewardExpr::new(snap(expr.root(), &self.grammar.constants))
    }
}

fn snap(node: &Expr, vocab: &[f64]) -> Expr {
    match node {
        Expr::Primitive(k) => Expr::Primitive(*k),
        Expr::Constant(c) => {
            let key = |x: f64| x.max(1e-300).ln();
            let best = vocab
                .iter()
                .copied()
                .min_by(|a, b| (key(*a) - key(*c)).abs().total_cmp(&(key(*b) - key(*c)).abs()))
                .unwrap_or(*c);
            Expr::Constant(best)
        }
        Expr::Neg(c) => Expr::neg(snap(c, vocab)),
        Expr::Binary(op, l, r) => Expr::binary(*op, snap(l, vocab), snap(r, vocab)),
    }
}

/// Samples an expression and returns its canonical text and log-probability.
pub fn sample_expr<R: Rng + ?Sized>(meta: &MetaParams, rng: &mut R) -> (String, f64) {
    let d = meta.sample(rng);
    (d.text, d.log_prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_grammar_always_yields_g1() {
        let mut meta = MetaParams::uniform(Grammar::default(), 1.0);
        meta.kind_logits_mut(0).copy_from_slice(&[1e9, -1e9, -1e9, -1e9]);
        let prims = meta.primitive_logits_mut(0);
        prims.fill(-1e9);
        prims[0] = 1e9;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (text, lp) = sample_expr(&meta, &mut rng);
            assert_eq!(text, "g1");
            assert_eq!(lp, 0.0);
        }
    }

    #[test]
    fn derive_recovers_sampled_choices() {
        let meta = MetaParams::uniform(Grammar::default(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = meta.sample(&mut rng);
            assert_eq!(meta.derive(&d.expr).as_deref(), Some(d.choices.as_slice()));
            assert!((meta.log_prob(&d.expr).unwrap() - d.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn underivable_expressions() {
        let meta = MetaParams::uniform(Grammar::default(), 1.0);
        assert!(meta.derive(&parse("g5").unwrap()).is_none());
        assert!(meta.derive(&parse("g1 + 0.7").unwrap()).is_none());
        let snapped = meta.snap_constants(&parse("g1 + 0.7 * 0.0001 + 0").unwrap());
        assert_eq!(snapped.to_text(), "g1 + 0.5 * 0.05 + 0.05");
        assert!(meta.derive(&snapped).is_some());
        let deep = parse("-(g1 + 0.5 * (g2 + 0.3 * (g3 - 0.2 * (g4 + 0.1 * 1))) + 0.1 * 1) / 1.2").unwrap();
        assert!(meta.derive(&meta.snap_constants(&deep)).is_none());
    }

    #[test]
    fn sampled_depth_respects_limit() {
        let mut meta = MetaParams::uniform(
            Grammar {
                max_depth: 3,
                ..Grammar::default()
            },
            1.0,
        );
        for level in 0..3 {
            meta.kind_logits_mut(level)[NodeKind::Binary as usize] = 5.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let d = meta.sample(&mut rng);
            assert!(d.expr.depth() <= 3);
        }
    }
}
