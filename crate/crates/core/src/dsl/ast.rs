use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::parser::{parse, ParseError};

/// Binary operators of the reward language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "**",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => PREC_ADD,
            BinaryOp::Mul | BinaryOp::Div => PREC_MUL,
            BinaryOp::Pow => PREC_POW,
        }
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

/// A node of a reward expression tree.
///
/// Primitive indices are 1-based to match the `g1..g9` surface syntax.
/// Constants are always non-negative; negation is an explicit node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Primitive(usize),
    Constant(f64),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn prim(index: usize) -> Self {
        Expr::Primitive(index)
    }

    pub fn constant(value: f64) -> Self {
        Expr::Constant(value)
    }

    pub fn neg(child: Expr) -> Self {
        Expr::Neg(Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Self {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    /// Number of nodes on the longest root-to-leaf path; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Primitive(_) | Expr::Constant(_) => 1,
            Expr::Neg(c) => 1 + c.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Primitive(_) | Expr::Constant(_) => 1,
            Expr::Neg(c) => 1 + c.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Largest primitive index referenced, 0 when the tree is primitive-free.
    pub fn max_primitive(&self) -> usize {
        match self {
            Expr::Primitive(k) => *k,
            Expr::Constant(_) => 0,
            Expr::Neg(c) => c.max_primitive(),
            Expr::Binary(_, l, r) => l.max_primitive().max(r.max_primitive()),
        }
    }

    pub fn has_primitive(&self) -> bool {
        self.max_primitive() > 0
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Primitive(_) | Expr::Constant(_) => PREC_ATOM,
            Expr::Neg(_) => PREC_NEG,
            Expr::Binary(op, _, _) => op.precedence(),
        }
    }

    fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Primitive(k) => write!(f, "g{k}"),
            // f64's Display never uses exponent notation, so the literal
            // always matches `[0-9]+(.[0-9]+)?` for non-negative values.
            Expr::Constant(c) => write!(f, "{c}"),
            Expr::Neg(c) => {
                f.write_str("-")?;
                Expr::write_child(f, c, c.precedence() < PREC_NEG)
            }
            Expr::Binary(op, l, r) => {
                let prec = op.precedence();
                let (left_parens, right_parens) = if *op == BinaryOp::Pow {
                    // right-associative; the exponent is a unary operand
                    (l.precedence() <= prec, r.precedence() < PREC_NEG)
                } else {
                    (l.precedence() < prec, r.precedence() <= prec)
                };
                Expr::write_child(f, l, left_parens)?;
                write!(f, " {} ", op.symbol())?;
                Expr::write_child(f, r, right_parens)
            }
        }
    }
}

/// A parsed reward configuration: the tree whose symbolic execution over
/// primitive values yields the scalar reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RewardExpr {
    root: Expr,
}

impl RewardExpr {
    pub fn new(root: Expr) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn into_root(self) -> Expr {
        self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn max_primitive(&self) -> usize {
        self.root.max_primitive()
    }

    /// Canonical concrete syntax with minimal parentheses.
    pub fn to_text(&self) -> String {
        self.root.to_string()
    }
}

impl From<Expr> for RewardExpr {
    fn from(root: Expr) -> Self {
        Self { root }
    }
}

impl fmt::Display for RewardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for RewardExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl TryFrom<String> for RewardExpr {
    type Error = ParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse(&s)
    }
}

impl From<RewardExpr> for String {
    fn from(e: RewardExpr) -> Self {
        e.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_identity_case() {
        assert_eq!(Expr::prim(1).to_string(), "g1");
    }

    #[test]
    fn omits_parentheses_implied_by_precedence() {
        let e = Expr::binary(
            BinaryOp::Add,
            Expr::prim(1),
            Expr::binary(BinaryOp::Mul, Expr::constant(0.5), Expr::prim(2)),
        );
        assert_eq!(e.to_string(), "g1 + 0.5 * g2");
        assert_eq!(Expr::neg(e).to_string(), "-(g1 + 0.5 * g2)");
    }

    #[test]
    fn keeps_parentheses_needed_for_associativity() {
        let sub = Expr::binary(
            BinaryOp::Sub,
            Expr::prim(1),
            Expr::binary(BinaryOp::Sub, Expr::prim(2), Expr::prim(3)),
        );
        assert_eq!(sub.to_string(), "g1 - (g2 - g3)");
        let pow_left = Expr::binary(
            BinaryOp::Pow,
            Expr::binary(BinaryOp::Pow, Expr::prim(1), Expr::constant(2.0)),
            Expr::constant(3.0),
        );
        assert_eq!(pow_left.to_string(), "(g1 ** 2) ** 3");
        let pow_right = Expr::binary(
            BinaryOp::Pow,
            Expr::prim(1),
            Expr::binary(BinaryOp::Pow, Expr::constant(2.0), Expr::neg(Expr::prim(2))),
        );
        assert_eq!(pow_right.to_string(), "g1 ** 2 ** -g2");
        let neg_base = Expr::binary(BinaryOp::Pow, Expr::neg(Expr::prim(1)), Expr::constant(2.0));
        assert_eq!(neg_base.to_string(), "(-g1) ** 2");
    }

    #[test]
    fn depth_counts_nodes() {
        let e: RewardExpr = "g1 + 0.5 * (g2 + 0.5 * (g3 + 0.5 * (g4 + 0.5)))".parse().unwrap();
        assert_eq!(e.depth(), 8);
        assert_eq!(Expr::prim(3).depth(), 1);
    }
}
