//! Field expressions: numbers, variables `x1..xN`, `+ - * / ^`, unary minus,
//! `sin cos exp log sqrt`, and parentheses.
//!
//! Precedence from tightest: `^` (right-associative), unary `-`, `* /`, `+ -`.
//! So `-x1^2` is `-(x1^2)` and `2^3^2` is `2^(3^2)`. The exponent of `^` may
//! itself start with a unary minus: `2^-1`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    const ALL: [Func; 5] = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based: `x1` is `Var(0)`.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownIdentifier,
    Arity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// 1-based.
    pub line: usize,
    /// 1-based, counted in characters.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func} is undefined at {arg}")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable x{index} is not bound (point has {len} coordinates)")]
    Unbound { index: usize, len: usize },
    #[error("result is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn err(kind: ParseErrorKind, line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        kind,
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| err(ParseErrorKind::Syntax, l0, c0, format!("malformed number '{text}'")))?;
            if !v.is_finite() {
                return Err(err(ParseErrorKind::Syntax, l0, c0, format!("number '{text}' is out of range")));
            }
            Tok::Num(v)
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(err(ParseErrorKind::Syntax, l0, c0, format!("unexpected character '{c}'"))),
            }
        };
        col += i - start;
        out.push(Token {
            tok,
            line: l0,
            column: c0,
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let t = self.peek();
        let found = match &t.tok {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
        };
        err(ParseErrorKind::Syntax, t.line, t.column, format!("expected {what}, found {found}"))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = self.peek().tok {
            self.next();
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = self.peek().tok {
            self.next();
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Op('-') {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek().tok == Tok::Op('^') {
            self.next();
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.next();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                if self.peek().tok != Tok::RParen {
                    return Err(self.unexpected("')'"));
                }
                self.next();
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                if self.peek().tok == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| {
                        err(ParseErrorKind::UnknownIdentifier, t.line, t.column, format!("unknown function '{name}'"))
                    })?;
                    self.next();
                    let mut args = Vec::new();
                    if self.peek().tok != Tok::RParen {
                        args.push(self.expr()?);
                        while self.peek().tok == Tok::Comma {
                            self.next();
                            args.push(self.expr()?);
                        }
                    }
                    if self.peek().tok != Tok::RParen {
                        return Err(self.unexpected("')' or ','"));
                    }
                    self.next();
                    if args.len() != 1 {
                        return Err(err(
                            ParseErrorKind::Arity,
                            t.line,
                            t.column,
                            format!("{name} takes 1 argument, got {}", args.len()),
                        ));
                    }
                    return Ok(Expr::Call(func, Box::new(args.remove(0))));
                }
                if Func::from_name(&name).is_some() {
                    return Err(err(ParseErrorKind::Arity, t.line, t.column, format!("{name} needs an argument")));
                }
                variable_index(&name).map(Expr::Var).ok_or_else(|| {
                    err(ParseErrorKind::UnknownIdentifier, t.line, t.column, format!("unknown identifier '{name}'"))
                })
            }
            _ => Err(self.unexpected("a number, variable, function or '('")),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if p.peek().tok != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::Unbound {
                index: i + 1,
                len: x.len(),
            })?,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval(x)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log if a <= 0.0 => return Err(EvalError::Domain { func: "log", arg: a }),
                    Func::Log => a.ln(),
                    Func::Sqrt if a < 0.0 => return Err(EvalError::Domain { func: "sqrt", arg: a }),
                    Func::Sqrt => a.sqrt(),
                }
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(v)
    }

    /// Largest one-based variable index referenced, 0 if none.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Call(_, e) => e.max_variable(),
            Expr::Bin(_, a, b) => a.max_variable().max(b.max_variable()),
        }
    }

    /// `true` when the expression references no variables.
    pub fn is_constant(&self) -> bool {
        self.max_variable() == 0
    }
}

/// Fully parenthesised, so printing and re-parsing gives back the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(s: &str, x: &[f64]) -> f64 {
        parse_expression(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn basic_evaluation() {
        assert_eq!(eval("cos(x1)*x2 + 1", &[0.0, 3.0]), 4.0);
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
        assert_eq!(eval("1 - 2 - 3", &[]), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[]), 1.0);
        assert_eq!(eval("2 * -3", &[]), -6.0);
        assert_eq!(eval("--3", &[]), 3.0);
        assert_eq!(eval("1.5e2 + .5", &[]), 150.5);
        assert_eq!(eval("sqrt(x3)", &[0.0, 0.0, 9.0]), 3.0);
    }

    #[test]
    fn error_positions() {
        let e = parse_expression("x1 +").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::Syntax, 1, 5));
        let e = parse_expression("x1 +\n  foo").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ParseErrorKind::UnknownIdentifier, 2, 3));
        let e = parse_expression("sin(x1, x2)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Arity);
        let e = parse_expression("sin").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Arity);
        let e = parse_expression("tan(x1)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier);
        assert_eq!(parse_expression("(x1").unwrap_err().column, 4);
        assert_eq!(parse_expression("x1 x2").unwrap_err().column, 4);
        assert_eq!(parse_expression("x0").unwrap_err().kind, ParseErrorKind::UnknownIdentifier);
        assert!(parse_expression("1e999").is_err());
        assert_eq!(parse_expression("3 $").unwrap_err().column, 3);
    }

    #[test]
    fn domain_errors() {
        let e = parse_expression("log(x1)").unwrap();
        assert!(matches!(e.eval(&[0.0]), Err(EvalError::Domain { func: "log", .. })));
        assert!(matches!(parse_expression("sqrt(-1)").unwrap().eval(&[]), Err(EvalError::Domain { .. })));
        assert!(matches!(parse_expression("1/x1").unwrap().eval(&[0.0]), Err(EvalError::DivisionByZero)));
        assert!(matches!(parse_expression("x4").unwrap().eval(&[1.0]), Err(EvalError::Unbound { index: 4, .. })));
        assert!(matches!(parse_expression("exp(1000)").unwrap().eval(&[]), Err(EvalError::NonFinite)));
    }

    #[test]
    fn variable_range() {
        assert_eq!(parse_expression("x1 * x12 + 3").unwrap().max_variable(), 12);
        assert!(parse_expression("sin(2) + 1").unwrap().is_constant());
    }

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![(0.0f64..1e6).prop_map(Expr::Num), (0usize..8).prop_map(Expr::Var)]
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(5, 48, 2, |inner| {
            let ops = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow)
            ];
            let funcs = prop_oneof![
                Just(Func::Sin),
                Just(Func::Cos),
                Just(Func::Exp),
                Just(Func::Log),
                Just(Func::Sqrt)
            ];
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (ops, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
                (funcs, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse_expression(&printed).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(parse_expression(&back.to_string()).unwrap(), back);
        }
    }
}
