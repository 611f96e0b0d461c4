//! Recursive-descent parser for the reward expression syntax.
//!
//! Precedence, loosest first: `+ -`, `* /`, unary `-`, `**`. Binary `+ - * /`
//! are left-associative, `**` is right-associative and its exponent is a
//! unary operand (`2 ** -g1` is accepted).

use std::fmt;

use super::ast::{BinaryOp, Expr, RewardExpr};

/// Highest primitive index the surface syntax can name (`g1..g9`).
pub const MAX_PRIMITIVES: usize = 9;

const MAX_NESTING: usize = 256;
const MAX_TOKENS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    InvalidLiteral,
    UnknownIdentifier(String),
    UnexpectedToken(String),
    UnexpectedEnd,
    UnbalancedParen,
    TrailingInput,
    TooDeep,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// Byte offset into the input where the error was detected.
    pub offset: usize,
    pub kind: ParseErrorKind,
    /// Token classes that would have been accepted at `offset`.
    pub expected: Vec<&'static str>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}")?,
            ParseErrorKind::InvalidLiteral => f.write_str("malformed decimal literal")?,
            ParseErrorKind::UnknownIdentifier(id) => write!(f, "unknown identifier `{id}`")?,
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token `{t}`")?,
            ParseErrorKind::UnexpectedEnd => f.write_str("unexpected end of input")?,
            ParseErrorKind::UnbalancedParen => f.write_str("unbalanced parenthesis")?,
            ParseErrorKind::TrailingInput => f.write_str("trailing input")?,
            ParseErrorKind::TooDeep => f.write_str("expression nested too deeply")?,
            ParseErrorKind::TooLong => write!(f, "expression longer than {MAX_TOKENS} tokens")?,
        }
        write!(f, " at byte {}", self.offset)?;
        if !self.expected.is_empty() {
            write!(f, "; expected one of: {}", self.expected.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Prim(usize),
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    StarStar,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(self) -> String {
        match self {
            Tok::Prim(k) => format!("g{k}"),
            Tok::Num(x) => x.to_string(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::Slash => "/".into(),
            Tok::StarStar => "**".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::End => "end of input".into(),
        }
    }
}

const OPERAND: &[&str] = &["identifier", "number", "(", "-"];
const OPERATOR: &[&str] = &["+", "-", "*", "/", "**", ")", "end of input"];

fn lex(text: &str, max_primitive: usize) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'/' => Tok::Slash,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    i += 1;
                    Tok::StarStar
                } else {
                    Tok::Star
                }
            }
            b'0'..=b'9' => {
                while i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                }
                if bytes.get(i + 1) == Some(&b'.') {
                    i += 1;
                    if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                        return Err(ParseError {
                            offset: start,
                            kind: ParseErrorKind::InvalidLiteral,
                            expected: vec!["digit after decimal point"],
                        });
                    }
                    while i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &text[start..=i];
                let value: f64 = lit.parse().map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::InvalidLiteral,
                    expected: vec!["number"],
                })?;
                Tok::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i + 1 < bytes.len() && (bytes[i + 1].is_ascii_alphanumeric() || bytes[i + 1] == b'_') {
                    i += 1;
                }
                let ident = &text[start..=i];
                match primitive_index(ident) {
                    Some(k) if k <= max_primitive => Tok::Prim(k),
                    _ => {
                        return Err(ParseError {
                            offset: start,
                            kind: ParseErrorKind::UnknownIdentifier(ident.to_string()),
                            expected: vec!["identifier g1..g9"],
                        })
                    }
                }
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('\u{fffd}');
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnexpectedChar(ch),
                    expected: OPERAND.iter().chain(OPERATOR).copied().collect(),
                });
            }
        };
        out.push((start, tok));
        i += 1;
    }
    if out.len() > MAX_TOKENS {
        return Err(ParseError {
            offset: out[MAX_TOKENS].0,
            kind: ParseErrorKind::TooLong,
            expected: vec![],
        });
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

fn primitive_index(ident: &str) -> Option<usize> {
    let digits = ident.strip_prefix('g')?;
    if digits.len() != 1 {
        return None;
    }
    let k = digits.parse::<usize>().ok()?;
    (1..=MAX_PRIMITIVES).contains(&k).then_some(k)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    nesting: usize,
}

impl Parser {
    fn peek(&self) -> Tok {
        self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error(&self, kind: ParseErrorKind, expected: &[&'static str]) -> ParseError {
        ParseError {
            offset: self.offset(),
            kind,
            expected: expected.to_vec(),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(self.error(ParseErrorKind::TooDeep, &[]));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::neg(inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Tok::StarStar {
            self.bump();
            self.enter()?;
            let exponent = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Prim(k) => {
                self.bump();
                Ok(Expr::Primitive(k))
            }
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Constant(x))
            }
            Tok::LParen => {
                self.bump();
                self.enter()?;
                let inner = self.expr()?;
                match self.peek() {
                    Tok::RParen => {
                        self.bump();
                        self.nesting -= 1;
                        Ok(inner)
                    }
                    Tok::End => Err(self.error(ParseErrorKind::UnbalancedParen, &[")"])),
                    other => Err(self.error(ParseErrorKind::UnexpectedToken(other.describe()), &["+", "-", "*", "/", "**", ")"])),
                }
            }
            Tok::End => Err(self.error(ParseErrorKind::UnexpectedEnd, OPERAND)),
            other => Err(self.error(ParseErrorKind::UnexpectedToken(other.describe()), OPERAND)),
        }
    }
}

/// Parses concrete syntax into a tree, accepting identifiers `g1..g9`.
pub fn parse(text: &str) -> Result<RewardExpr, ParseError> {
    parse_with_primitives(text, MAX_PRIMITIVES)
}

/// Parses concrete syntax, rejecting primitive identifiers above `num_primitives`.
pub fn parse_with_primitives(text: &str, num_primitives: usize) -> Result<RewardExpr, ParseError> {
    let mut p = Parser {
        toks: lex(text, num_primitives.min(MAX_PRIMITIVES))?,
        pos: 0,
        nesting: 0,
    };
    let root = p.expr()?;
    match p.peek() {
        Tok::End => Ok(RewardExpr::new(root)),
        Tok::RParen => Err(p.error(ParseErrorKind::UnbalancedParen, &["+", "-", "*", "/", "**", "end of input"])),
        _ => Err(p.error(ParseErrorKind::TrailingInput, OPERATOR)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::ast::BinaryOp::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap().into_root()
    }

    #[test]
    fn single_identifier() {
        assert_eq!(p("g1"), Expr::Primitive(1));
    }

    #[test]
    fn corpus_row_has_top_level_add() {
        let e = p("g1 * (g2 - 1) / 2 + (g3 + 1) * (g4 - 1) * 2 / 3");
        assert!(matches!(e, Expr::Binary(Add, _, _)));
    }

    #[test]
    fn unmatched_close_paren_is_rejected() {
        let err = parse("g1 + 0.5 * (g2 + 0.5 * (g3 + 0.5 * (g4))))").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedParen);
        assert_eq!(err.offset, 41);
        assert!(err.expected.contains(&"end of input"));
    }

    #[test]
    fn unclosed_paren_is_rejected() {
        let err = parse("(g1 + g2").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnbalancedParen);
        assert_eq!(err.offset, 8);
        assert_eq!(err.expected, vec![")"]);
    }

    #[test]
    fn unknown_identifiers_are_rejected() {
        for bad in ["g0", "g10", "x", "g", "G1"] {
            let err = parse(bad).unwrap_err();
            assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(_)), "{bad}");
        }
        let err = parse_with_primitives("g1 + g5", 4).unwrap_err();
        assert_eq!(err.offset, 5);
    }

    #[test]
    fn trailing_tokens_are_rejected() {
        let err = parse("g1 g2").unwrap_err();
        assert_eq!(err.offset, 3);
        assert_eq!(err.kind, ParseErrorKind::TrailingInput);
        assert!(parse("g1 +").is_err());
        assert!(parse("").is_err());
        assert!(parse("1.").is_err());
        assert!(parse(".5").is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(
            p("g1 - g2 - g3"),
            Expr::binary(Sub, Expr::binary(Sub, Expr::prim(1), Expr::prim(2)), Expr::prim(3))
        );
        assert_eq!(
            p("g1 ** g2 ** g3"),
            Expr::binary(Pow, Expr::prim(1), Expr::binary(Pow, Expr::prim(2), Expr::prim(3)))
        );
        // ** binds tighter than unary minus
        assert_eq!(p("-g1 ** 2"), Expr::neg(Expr::binary(Pow, Expr::prim(1), Expr::constant(2.0))));
        // unary minus binds tighter than / and *
        assert_eq!(p("-(g1) / 1.2"), Expr::binary(Div, Expr::neg(Expr::prim(1)), Expr::constant(1.2)));
        assert_eq!(p("2 ** -g1"), Expr::binary(Pow, Expr::constant(2.0), Expr::neg(Expr::prim(1))));
        assert_eq!(p(" ( g1 ) "), Expr::prim(1));
    }

    #[test]
    fn pathological_nesting_is_an_error_not_a_crash() {
        let text = format!("{}g1{}", "(".repeat(1_000), ")".repeat(1_000));
        assert_eq!(parse(&text).unwrap_err().kind, ParseErrorKind::TooDeep);
        let negs = format!("{}g1", "-".repeat(1_000));
        assert_eq!(parse(&negs).unwrap_err().kind, ParseErrorKind::TooDeep);
        let chain = vec!["g1"; 5_000].join(" + ");
        assert_eq!(parse(&chain).unwrap_err().kind, ParseErrorKind::TooLong);
    }
}
