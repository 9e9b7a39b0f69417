//! A small arithmetic language for metric coefficients.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := atom ('^' int)?
//! atom   := number | 'pi' | 'x' digit+ | func '(' expr ')' | '(' expr ')' | '-' atom
//! func   := 'sin' | 'cos' | 'exp'
//! ```
//!
//! Error offsets are 1-based byte columns: the offset of a missing token at
//! the end of `"sin(2*pi*x1"` is 12.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::algebra::{AlgebraError, GradedNilpotentAlgebra};

/// Maximum depth of an expression tree.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Pi,
    /// 1-based coordinate index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at column {offset}: expected one of {}", expected.join(", "))]
    SyntaxError { offset: usize, expected: Vec<&'static str> },
    #[error("unknown variable {name} at column {offset} (dimension {dim})")]
    UnknownVariable { name: String, offset: usize, dim: usize },
    #[error("expression nests deeper than {MAX_DEPTH} at column {offset}")]
    DepthExceeded { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::SyntaxError { offset, .. }
            | ParseError::UnknownVariable { offset, .. }
            | ParseError::DepthExceeded { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivByZero,
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("variable x{0} not supplied")]
    MissingVariable(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PeriodicityError {
    #[error("at least 100 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num { value: f64, integer: bool },
    Ident,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
    Invalid,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

const ATOM_START: &[&str] = &["number", "pi", "variable", "sin", "cos", "exp", "(", "-"];
const AFTER_OPERAND: &[&str] = &["+", "-", "*", "/", "^"];

fn lex_at(src: &str, mut pos: usize) -> Token {
    let bytes = src.as_bytes();
    while pos < bytes.len() && (bytes[pos] as char).is_ascii_whitespace() {
        pos += 1;
    }
    if pos >= bytes.len() {
        return Token { tok: Tok::End, start: pos, end: pos };
    }
    let start = pos;
    let c = bytes[pos];
    let single = |tok| Token { tok, start, end: start + 1 };
    match c {
        b'+' => single(Tok::Plus),
        b'-' => single(Tok::Minus),
        b'*' => single(Tok::Star),
        b'/' => single(Tok::Slash),
        b'^' => single(Tok::Caret),
        b'(' => single(Tok::LParen),
        b')' => single(Tok::RParen),
        b'0'..=b'9' | b'.' => {
            let mut end = pos;
            let mut integer = true;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end < bytes.len() && bytes[end] == b'.' {
                integer = false;
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut e = end + 1;
                if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                    e += 1;
                }
                if e < bytes.len() && bytes[e].is_ascii_digit() {
                    integer = false;
                    while e < bytes.len() && bytes[e].is_ascii_digit() {
                        e += 1;
                    }
                    end = e;
                }
            }
            match src[start..end].parse::<f64>() {
                Ok(value) if value.is_finite() => Token { tok: Tok::Num { value, integer }, start, end },
                _ => Token { tok: Tok::Invalid, start, end },
            }
        }
        c if c.is_ascii_alphabetic() => {
            let mut end = pos;
            while end < bytes.len() && bytes[end].is_ascii_alphanumeric() {
                end += 1;
            }
            Token { tok: Tok::Ident, start, end }
        }
        _ => {
            // Step over a whole UTF-8 scalar so offsets stay on boundaries.
            let width = src[start..].chars().next().map_or(1, char::len_utf8);
            Token { tok: Tok::Invalid, start, end: start + width }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    dim: usize,
    cur: Token,
    nesting: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim: usize) -> Self {
        let cur = lex_at(src, 0);
        Self { src, dim, cur, nesting: 0 }
    }

    fn bump(&mut self) {
        self.cur = lex_at(self.src, self.cur.end);
    }

    fn column(&self) -> usize {
        self.cur.start + 1
    }

    fn syntax(&self, expected: &[&'static str]) -> ParseError {
        ParseError::SyntaxError { offset: self.column(), expected: expected.to_vec() }
    }

    fn node(&self, e: Expr) -> Result<Expr, ParseError> {
        if e.depth() > MAX_DEPTH {
            return Err(ParseError::DepthExceeded { offset: self.column() });
        }
        Ok(e)
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            return Err(ParseError::DepthExceeded { offset: self.column() });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.cur.tok {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = self.node(Expr::Add(Box::new(lhs), Box::new(rhs)))?;
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = self.node(Expr::Sub(Box::new(lhs), Box::new(rhs)))?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.cur.tok {
                Tok::Star => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = self.node(Expr::Mul(Box::new(lhs), Box::new(rhs)))?;
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = self.node(Expr::Div(Box::new(lhs), Box::new(rhs)))?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.cur.tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if self.cur.tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let exponent = match self.cur.tok {
            Tok::Num { value, integer: true } if value <= i32::MAX as f64 => value as i32,
            _ => return Err(self.syntax(&["integer exponent"])),
        };
        self.bump();
        self.node(Expr::Pow(Box::new(base), if negative { -exponent } else { exponent }))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.cur.tok {
            Tok::Num { value, .. } => {
                self.bump();
                Ok(Expr::Number(value))
            }
            Tok::Minus => {
                self.enter()?;
                self.bump();
                let inner = self.atom()?;
                self.nesting -= 1;
                self.node(Expr::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                self.enter()?;
                self.bump();
                let inner = self.expr()?;
                if self.cur.tok != Tok::RParen {
                    return Err(self.syntax(&["+", "-", "*", "/", "^", ")"]));
                }
                self.bump();
                self.nesting -= 1;
                Ok(inner)
            }
            Tok::Ident => {
                let name = &self.src[self.cur.start..self.cur.end];
                let offset = self.column();
                match name {
                    "pi" => {
                        self.bump();
                        Ok(Expr::Pi)
                    }
                    "sin" | "cos" | "exp" => {
                        let kind = name.to_string();
                        self.bump();
                        if self.cur.tok != Tok::LParen {
                            return Err(self.syntax(&["("]));
                        }
                        self.enter()?;
                        self.bump();
                        let arg = Box::new(self.expr()?);
                        if self.cur.tok != Tok::RParen {
                            return Err(self.syntax(&["+", "-", "*", "/", "^", ")"]));
                        }
                        self.bump();
                        self.nesting -= 1;
                        let e = match kind.as_str() {
                            "sin" => Expr::Sin(arg),
                            "cos" => Expr::Cos(arg),
                            _ => Expr::Exp(arg),
                        };
                        self.node(e)
                    }
                    _ if name.len() > 1
                        && name.starts_with('x')
                        && name[1..].bytes().all(|b| b.is_ascii_digit()) =>
                    {
                        let index: usize = name[1..].parse().unwrap_or(0);
                        if index == 0 || index > self.dim {
                            return Err(ParseError::UnknownVariable { name: name.to_string(), offset, dim: self.dim });
                        }
                        self.bump();
                        Ok(Expr::Var(index))
                    }
                    _ => Err(self.syntax(ATOM_START)),
                }
            }
            _ => Err(self.syntax(ATOM_START)),
        }
    }
}

/// Parse `text` as an expression over the variables `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, dim);
    let e = p.expr()?;
    if p.cur.tok != Tok::End {
        let mut expected = AFTER_OPERAND.to_vec();
        expected.push("end of input");
        return Err(p.syntax(&expected));
    }
    Ok(e)
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Number(v)
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Number(_) | Expr::Pi | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => 1 + a.depth(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Largest variable index used, 0 for constants.
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Number(_) | Expr::Pi => 0,
            Expr::Var(i) => *i,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn uses_var(&self, index: usize) -> bool {
        match self {
            Expr::Number(_) | Expr::Pi => false,
            Expr::Var(i) => *i == index,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.uses_var(index),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.uses_var(index) || b.uses_var(index),
        }
    }

    /// Value when the expression uses no variables and evaluates cleanly.
    pub fn constant_value(&self) -> Option<f64> {
        if self.max_var() != 0 {
            return None;
        }
        self.eval(&[]).ok()
    }

    /// Fold constant subtrees into numbers.
    pub fn simplify(&self) -> Expr {
        if let Some(v) = self.constant_value() {
            return Expr::Number(v);
        }
        let s = |a: &Expr| a.simplify();
        let is = |e: &Expr, v: f64| matches!(e, Expr::Number(n) if *n == v);
        match self {
            Expr::Number(_) | Expr::Pi | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(s(a))),
            Expr::Pow(a, k) => Expr::Pow(Box::new(s(a)), *k),
            Expr::Sin(a) => Expr::Sin(Box::new(s(a))),
            Expr::Cos(a) => Expr::Cos(Box::new(s(a))),
            Expr::Exp(a) => Expr::Exp(Box::new(s(a))),
            Expr::Add(a, b) => {
                let (a, b) = (s(a), s(b));
                if is(&a, 0.0) {
                    b
                } else if is(&b, 0.0) {
                    a
                } else {
                    Expr::Add(Box::new(a), Box::new(b))
                }
            }
            Expr::Sub(a, b) => Expr::Sub(Box::new(s(a)), Box::new(s(b))),
            Expr::Mul(a, b) => {
                let (a, b) = (s(a), s(b));
                if is(&a, 0.0) || is(&b, 0.0) {
                    Expr::Number(0.0)
                } else if is(&a, 1.0) {
                    b
                } else if is(&b, 1.0) {
                    a
                } else {
                    Expr::Mul(Box::new(a), Box::new(b))
                }
            }
            Expr::Div(a, b) => Expr::Div(Box::new(s(a)), Box::new(s(b))),
        }
    }

    /// IEEE double evaluation at `x` (`x[0]` is `x1`).
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Number(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(i) => *x.get(i - 1).ok_or(EvalError::MissingVariable(*i))?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let num = a.eval(x)?;
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(EvalError::DivByZero);
                }
                num / den
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x)?;
                if base == 0.0 && *k < 0 {
                    return Err(EvalError::DivByZero);
                }
                base.powi(*k)
            }
            Expr::Sin(a) => a.eval(x)?.sin(),
            Expr::Cos(a) => a.eval(x)?.cos(),
            Expr::Exp(a) => a.eval(x)?.exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised form; reparses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(v) if *v < 0.0 => write!(f, "(0-{})", -v),
            Expr::Number(v) => write!(f, "{v}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => write!(f, "({a})^{k}"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicityReport {
    pub pass: bool,
    pub worst_violation: f64,
    /// Point and generator index achieving the worst violation.
    pub worst_point: Vec<f64>,
    pub worst_generator: usize,
}

/// Compare `f(γ x)` with `f(x)` for random `x` in `[-2, 2]^n` and every
/// lattice generator `γ`.
pub fn check_lattice_periodicity<R: Rng + ?Sized>(
    ast: &Expr,
    algebra: &GradedNilpotentAlgebra,
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<PeriodicityReport, PeriodicityError> {
    if samples < 100 {
        return Err(PeriodicityError::TooFewSamples(samples));
    }
    let n = algebra.dim();
    let generators = algebra.lattice_generators();
    let mut report = PeriodicityReport { pass: true, worst_violation: 0.0, worst_point: vec![0.0; n], worst_generator: 0 };
    for _ in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fx = ast.eval(&x)?;
        for (gi, g) in generators.iter().enumerate() {
            let gx = algebra.multiply(g, &x)?;
            let diff = (ast.eval(&gx)? - fx).abs();
            if diff > report.worst_violation {
                report.worst_violation = diff;
                report.worst_point = x.clone();
                report.worst_generator = gi;
            }
        }
    }
    report.pass = report.worst_violation <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::reference_eval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn documented_examples() {
        let e = parse("1 + 0.5*sin(2*pi*x1)", 3).unwrap();
        assert!((e.eval(&[0.25, 0.0, 0.0]).unwrap() - 1.5).abs() < 1e-15);
        let e = parse("x1^2 - x2*x3", 3).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0, 4.0]).unwrap(), -8.0);
        assert_eq!(Expr::Number(3.5).eval(&[]).unwrap(), 3.5);
        assert_eq!(parse("1/x1", 1).unwrap().eval(&[0.0]), Err(EvalError::DivByZero));
        assert!((parse("cos(2*pi*x2)", 2).unwrap().eval(&[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbalanced_parenthesis_reports_column_twelve() {
        match parse("sin(2*pi*x1", 1) {
            Err(ParseError::SyntaxError { offset, expected }) => {
                assert_eq!(offset, 12);
                assert!(expected.contains(&")"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse("x4", 3), Err(ParseError::UnknownVariable { offset: 1, .. })));
        assert!(matches!(parse("x0 + 1", 3), Err(ParseError::UnknownVariable { .. })));
        assert!(matches!(parse("y", 3), Err(ParseError::SyntaxError { offset: 1, .. })));
        assert!(matches!(parse("", 3), Err(ParseError::SyntaxError { offset: 1, .. })));
        assert!(matches!(parse("2 3", 3), Err(ParseError::SyntaxError { offset: 3, .. })));
        assert!(matches!(parse("x1^1.5", 3), Err(ParseError::SyntaxError { offset: 4, .. })));
        assert!(matches!(parse("sin 2", 3), Err(ParseError::SyntaxError { offset: 5, .. })));
        assert!(matches!(parse("1e999", 1), Err(ParseError::SyntaxError { .. })));
        let deep = format!("{}1{}", "(".repeat(200), ")".repeat(200));
        assert!(matches!(parse(&deep, 1), Err(ParseError::DepthExceeded { .. })));
        let long_sum = vec!["1"; 100].join("+");
        assert!(matches!(parse(&long_sum, 1), Err(ParseError::DepthExceeded { .. })));
        assert!(parse(&vec!["1"; 60].join("+"), 1).is_ok());
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("2 - 3 - 4", 1).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), -5.0);
        let e = parse("8 / 4 / 2", 1).unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 1.0);
        let e = parse("-2^2", 1).unwrap();
        // '-' binds to the atom, the power applies to the negated atom.
        assert_eq!(e.eval(&[]).unwrap(), 4.0);
        let e = parse("2*x1^-2", 1).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 0.5);
        assert_eq!(parse("0^-1", 1).unwrap().eval(&[]), Err(EvalError::DivByZero));
        assert_eq!(parse("exp(1000)", 1).unwrap().eval(&[]), Err(EvalError::NonFinite));
    }

    #[test]
    fn whitespace_is_ignored() {
        let a = parse(" 1+ 0.5 *sin( 2 * pi*x1 ) ", 1).unwrap();
        let b = parse("1+0.5*sin(2*pi*x1)", 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simplify_folds_constants() {
        let e = parse("(1 + 0) * (0.5 + 0.5) + 0*x1", 1).unwrap().simplify();
        assert_eq!(e, Expr::Number(1.0));
        let e = parse("0 + 2*x1", 1).unwrap().simplify();
        assert_eq!(e, Expr::Mul(Box::new(Expr::Number(2.0)), Box::new(Expr::Var(1))));
    }

    const CORPUS: &[&str] = &[
        "1", "pi", "x1", "-x1", "--x2", "x1+x2", "x1-x2-x3", "x1*x2/x3", "x1^3", "(x1+1)^-2",
        "sin(x1)", "cos(2*pi*x2)", "exp(-x1^2)", "1+0.5*sin(2*pi*x1)", "0.25e1*x3",
        "sin(2*pi*x1)*cos(2*pi*x2)", "1/(2+sin(2*pi*x1))", "(((x1)))", "-(x1+x2)", "x1^0",
        "3.25", ".5", "1e-3", "2E+2*x1", "sin(cos(exp(x1)))", "x1*x1*x1*x1", "1-(2-(3-(4-x1)))",
        "exp(x1)/exp(x2)", "-sin(-x1)", "pi^2*x3", "x1^2+x2^2+x3^2", "(x1-x2)*(x1+x2)",
        "cos(pi*x1)^2+sin(pi*x1)^2", "0.1*sin(2*pi*x2)", "2*pi", "x2/-x1", "-(-(-x3))",
        "1+2*3-4/5", "(1+2)*(3-4)/5", "x3^-1", "7", "cos(0)", "sin(2*pi*(x1+x2))",
        "exp(sin(x1))*2", "1.5-0.5*cos(2*pi*x1)", "x1-x1", "(x2)^2/(1+x1^2)", "-1*-1",
        "sin(x1)^2-cos(x2)^3", "123456.789*x1",
    ];

    #[test]
    fn printed_form_reparses_to_same_tree() {
        assert_eq!(CORPUS.len(), 50);
        for s in CORPUS {
            let e = parse(s, 3).unwrap_or_else(|err| panic!("{s}: {err}"));
            let printed = e.to_string();
            let again = parse(&printed, 3).unwrap_or_else(|err| panic!("{printed}: {err}"));
            assert_eq!(e, again, "{s} -> {printed}");
        }
    }

    #[test]
    fn evaluator_agrees_with_reference_interpreter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in CORPUS {
            let e = parse(s, 3).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                match (e.eval(&x), reference_eval(s, &x)) {
                    (Ok(a), Ok(b)) => assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{s}: {a} vs {b}"),
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("{s}: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn periodicity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t2 = GradedNilpotentAlgebra::torus(2).unwrap();
        let h3 = GradedNilpotentAlgebra::heisenberg(3).unwrap();
        let s = parse("sin(2*pi*x1)", 2).unwrap();
        assert!(check_lattice_periodicity(&s, &t2, 100, 1e-9, &mut rng).unwrap().pass);
        let x = parse("x1", 2).unwrap();
        let r = check_lattice_periodicity(&x, &t2, 100, 1e-9, &mut rng).unwrap();
        assert!(!r.pass);
        assert!((r.worst_violation - 1.0).abs() < 1e-12);
        let s3 = parse("sin(2*pi*x1)", 3).unwrap();
        assert!(check_lattice_periodicity(&s3, &h3, 200, 1e-9, &mut rng).unwrap().pass);
        // x3 alone is twisted by the generators e1, e2.
        let z = parse("sin(2*pi*x3)", 3).unwrap();
        assert!(!check_lattice_periodicity(&z, &h3, 200, 1e-9, &mut rng).unwrap().pass);
        assert!(matches!(
            check_lattice_periodicity(&s, &t2, 10, 1e-9, &mut rng),
            Err(PeriodicityError::TooFewSamples(10))
        ));
    }
}
