//! The reward-configuration language: syntax tree, parser, printer,
//! evaluator, structural classifier and grammar-constrained sampler.

mod ast;
mod classify;
mod eval;
mod parser;
mod sample;

pub use ast::{BinaryOp, Expr, RewardExpr};
pub use classify::{classify, interval, Interval, StructureClass};
pub use eval::{EvalError, EvalOutcome, DIV_EPSILON};
pub use parser::{parse, parse_with_primitives, ParseError, ParseErrorKind, MAX_PRIMITIVES};
pub use sample::{sample_expr, Derivation, Grammar, MetaParams, NodeKind, DEFAULT_CONSTANTS, DEFAULT_MAX_DEPTH};

/// Canonical text of an expression tree.
pub fn print(expr: &RewardExpr) -> String {
    expr.to_text()
}

/// One non-blank, non-comment line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusLine {
    /// 1-based line number in the source file.
    pub line: usize,
    pub text: String,
}

/// Splits corpus text into expression lines. `#` starts a comment that
/// runs to the end of the line; blank lines are skipped.
pub fn read_corpus(source: &str) -> Vec<CorpusLine> {
    source
        .lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let text = raw.split('#').next().unwrap_or("").trim();
            (!text.is_empty()).then(|| CorpusLine {
                line: i + 1,
                text: text.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_lines_skip_comments_and_blanks() {
        let src = "# header\n\ng1 + g2  # trailing\n   \n-(g1)\n";
        let lines = read_corpus(src);
        assert_eq!(
            lines,
            vec![
                CorpusLine {
                    line: 3,
                    text: "g1 + g2".into()
                },
                CorpusLine {
                    line: 5,
                    text: "-(g1)".into()
                },
            ]
        );
    }
}
