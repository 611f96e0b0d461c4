//! Structural taxonomy of reward expressions.
//!
//! * `Invalid`: the reward never increases with the outcome primitive `g1`
//!   (`-(g1 + 0.5 * g2)`), or, when `g1` is absent, with any primitive it
//!   uses. Constant rewards are invalid too.
//! * `Unstable`: a product (or power) of two or more primitive-carrying
//!   factors that is not inside the numerator of a normalizing division
//!   (`g1 * (g2 + 0.2) * g3`).
//! * `Stable`: everything else, i.e. linear combinations and normalized forms.
//!
//! A division normalizes when its denominator carries primitives and is
//! strictly positive over the whole primitive box `[0, 1]^k`, checked with
//! interval arithmetic.

use serde::{Deserialize, Serialize};

use super::ast::{BinaryOp, Expr, RewardExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureClass {
    Stable,
    Unstable,
    Invalid,
}

impl StructureClass {
    pub const ALL: [StructureClass; 3] = [StructureClass::Stable, StructureClass::Unstable, StructureClass::Invalid];

    pub fn as_str(self) -> &'static str {
        match self {
            StructureClass::Stable => "stable",
            StructureClass::Unstable => "unstable",
            StructureClass::Invalid => "invalid",
        }
    }
}

impl std::fmt::Display for StructureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl RewardExpr {
    pub fn classify(&self) -> StructureClass {
        classify(self)
    }
}

pub fn classify(expr: &RewardExpr) -> StructureClass {
    let root = expr.root();
    if penalizes_progress(root) {
        return StructureClass::Invalid;
    }
    if has_unnormalized_product(root, false) {
        return StructureClass::Unstable;
    }
    StructureClass::Stable
}

/// True when the reward can never increase with the outcome primitive `g1`
/// (its partial derivative is bounded above by 0 over the box) or, for
/// expressions without `g1`, with any primitive they use. Primitive-free
/// expressions qualify vacuously.
pub fn penalizes_progress(root: &Expr) -> bool {
    let used: Vec<usize> = (1..=root.max_primitive()).filter(|&k| uses(root, k)).collect();
    let never_increases = |k: usize| bounds(root, k).1.hi <= 0.0;
    if used.contains(&1) {
        never_increases(1)
    } else {
        used.into_iter().all(never_increases)
    }
}

fn uses(node: &Expr, k: usize) -> bool {
    match node {
        Expr::Primitive(j) => *j == k,
        Expr::Constant(_) => false,
        Expr::Neg(c) => uses(c, k),
        Expr::Binary(_, l, r) => uses(l, k) || uses(r, k),
    }
}

/// Closed interval bound used to reason about sign over the primitive box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    fn hull(values: &[f64]) -> Self {
        if values.iter().any(|v| v.is_nan()) {
            return Self::UNBOUNDED;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    fn strictly_positive(self) -> bool {
        self.lo > 0.0
    }

    fn is_zero(self) -> bool {
        self == Self::ZERO
    }

    fn neg(self) -> Self {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    fn add(self, o: Self) -> Self {
        Self::hull(&[self.lo + o.lo, self.hi + o.hi])
    }

    fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    fn mul(self, o: Self) -> Self {
        if self.is_zero() || o.is_zero() {
            return Self::ZERO;
        }
        Self::hull(&[self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
    }

    fn div(self, o: Self) -> Self {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Self::UNBOUNDED;
        }
        if self.is_zero() {
            return Self::ZERO;
        }
        Self::hull(&[self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi])
    }

    /// `self ** e` for a constant exponent.
    fn powf(self, e: f64) -> Self {
        let ends = [self.lo.powf(e), self.hi.powf(e)];
        if self.lo > 0.0 || (self.lo >= 0.0 && e >= 0.0) {
            return Self::hull(&ends);
        }
        if e.fract() != 0.0 || (e < 0.0 && self.hi >= 0.0) {
            return Self::UNBOUNDED;
        }
        if (e as i64) % 2 == 0 && self.hi >= 0.0 {
            return Self::hull(&[0.0, ends[0], ends[1]]);
        }
        Self::hull(&ends)
    }
}

/// Range of `node` when every primitive ranges over `[0, 1]`.
pub fn interval(node: &Expr) -> Interval {
    bounds(node, 0).0
}

/// Value range of `node` and range of its partial derivative with respect
/// to primitive `k` (forward-mode over intervals).
fn bounds(node: &Expr, k: usize) -> (Interval, Interval) {
    match node {
        Expr::Primitive(j) => (Interval { lo: 0.0, hi: 1.0 }, Interval::point(if *j == k { 1.0 } else { 0.0 })),
        Expr::Constant(c) => (Interval::point(*c), Interval::ZERO),
        Expr::Neg(c) => {
            let (v, d) = bounds(c, k);
            (v.neg(), d.neg())
        }
        Expr::Binary(op, l, r) => {
            let ((a, da), (b, db)) = (bounds(l, k), bounds(r, k));
            match op {
                BinaryOp::Add => (a.add(b), da.add(db)),
                BinaryOp::Sub => (a.sub(b), da.sub(db)),
                BinaryOp::Mul => (a.mul(b), da.mul(b).add(a.mul(db))),
                BinaryOp::Div => (a.div(b), da.mul(b).sub(a.mul(db)).div(b.mul(b))),
                BinaryOp::Pow => {
                    if b.lo != b.hi {
                        let d = if da.is_zero() && db.is_zero() {
                            Interval::ZERO
                        } else {
                            Interval::UNBOUNDED
                        };
                        return (Interval::UNBOUNDED, d);
                    }
                    let e = b.lo;
                    let d = if da.is_zero() || e == 0.0 {
                        Interval::ZERO
                    } else {
                        Interval::point(e).mul(a.powf(e - 1.0)).mul(da)
                    };
                    (a.powf(e), d)
                }
            }
        }
    }
}

fn has_unnormalized_product(node: &Expr, normalized: bool) -> bool {
    match node {
        Expr::Primitive(_) | Expr::Constant(_) => false,
        Expr::Neg(c) => has_unnormalized_product(c, normalized),
        Expr::Binary(op, l, r) => {
            let here = !normalized
                && match op {
                    BinaryOp::Mul => l.has_primitive() && r.has_primitive(),
                    BinaryOp::Pow => {
                        l.has_primitive() && {
                            let e = interval(r);
                            r.has_primitive() || e.lo >= 2.0
                        }
                    }
                    _ => false,
                };
            if here {
                return true;
            }
            let numerator_normalized = normalized || (*op == BinaryOp::Div && r.has_primitive() && interval(r).strictly_positive());
            has_unnormalized_product(l, numerator_normalized) || has_unnormalized_product(r, normalized)
        }
    }
}
