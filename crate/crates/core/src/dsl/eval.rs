use serde::{Deserialize, Serialize};

use super::ast::{BinaryOp, Expr, RewardExpr};
use crate::Scalar;

/// Denominators with magnitude below this are treated as zero.
pub const DIV_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivByZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("negative base with non-integer exponent")]
    DomainError,
    #[error("primitive g{0} has no value")]
    MissingPrimitive(usize),
}

/// Result of executing a reward expression: a finite value or the first error.
pub type EvalOutcome<F> = Result<F, EvalError>;

impl RewardExpr {
    /// Evaluates the expression over primitive values `g` (`g[0]` is `g1`).
    pub fn evaluate<F: Scalar>(&self, g: &[F]) -> EvalOutcome<F> {
        eval_node(self.root(), g)
    }
}

fn checked<F: Scalar>(value: F, operands_finite: bool) -> EvalOutcome<F> {
    if value.is_nan() {
        Err(EvalError::NonFinite)
    } else if value.is_infinite() {
        if operands_finite {
            Err(EvalError::Overflow)
        } else {
            Err(EvalError::NonFinite)
        }
    } else {
        Ok(value)
    }
}

fn eval_node<F: Scalar>(node: &Expr, g: &[F]) -> EvalOutcome<F> {
    match node {
        Expr::Primitive(k) => {
            let v = *g.get(k.wrapping_sub(1)).ok_or(EvalError::MissingPrimitive(*k))?;
            checked(v, false)
        }
        Expr::Constant(c) => checked(F::lit(*c), false),
        Expr::Neg(c) => Ok(-eval_node(c, g)?),
        Expr::Binary(op, l, r) => {
            let a = eval_node(l, g)?;
            let b = eval_node(r, g)?;
            let value = match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b.abs() < F::lit(DIV_EPSILON) {
                        return Err(EvalError::DivByZero);
                    }
                    a / b
                }
                BinaryOp::Pow => {
                    if a < F::zero() && b.fract() != F::zero() {
                        return Err(EvalError::DomainError);
                    }
                    if a.abs() < F::lit(DIV_EPSILON) && b < F::zero() {
                        return Err(EvalError::DivByZero);
                    }
                    a.powf(b)
                }
            };
            checked(value, true)
        }
    }
}
