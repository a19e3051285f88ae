//! Closed-form initial data: a small arithmetic grammar over `x1`, `x2`, `t`.
//!
//! ```text
//! expr    := prefix (infix prefix)*
//! prefix  := number | pi | x1 | x2 | t | func '(' expr ')' | '(' expr ')' | '-' expr | '+' expr
//! infix   := '+' | '-' | '*' | '/' | '^'
//! ```
//! `^` is right associative and binds tighter than unary minus, so `-x1^2 = -(x1^2)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Tanh => v.tanh(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X1,
    X2,
    T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x1: f64, x2: f64, t: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X1) => x1,
            Expr::Var(Var::X2) => x2,
            Expr::Var(Var::T) => t,
            Expr::Neg(e) => -e.eval(x1, x2, t),
            Expr::Call(f, e) => f.apply(e.eval(x1, x2, t)),
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(x1, x2, t), r.eval(x1, x2, t));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    '^' => a.powf(b),
                    _ => unreachable!("operator set is closed"),
                }
            }
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
        }
    }

    /// The value if the expression has no free variables.
    pub fn as_constant(&self) -> Option<f64> {
        if self.uses(Var::X1) || self.uses(Var::X2) || self.uses(Var::T) {
            None
        } else {
            Some(self.eval(0.0, 0.0, 0.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| format!("bad number '{text}'"))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(format!("unexpected character '{c}'"));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

fn infix_power(op: char) -> (u8, u8) {
    match op {
        '+' | '-' => (1, 2),
        '*' | '/' => (3, 4),
        '^' => (7, 6),
        _ => unreachable!(),
    }
}

const PREFIX_POWER: u8 = 5;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect_rparen(&mut self) -> std::result::Result<(), String> {
        match self.next() {
            Some(Tok::RParen) => Ok(()),
            other => Err(format!("expected ')', found {other:?}")),
        }
    }

    fn parse(&mut self, min_bp: u8) -> std::result::Result<Expr, String> {
        let mut lhs = match self.next() {
            Some(Tok::Num(v)) => Expr::Num(v),
            Some(Tok::Op('-')) => Expr::Neg(Box::new(self.parse(PREFIX_POWER)?)),
            Some(Tok::Op('+')) => self.parse(PREFIX_POWER)?,
            Some(Tok::LParen) => {
                let e = self.parse(0)?;
                self.expect_rparen()?;
                e
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x1" | "x" => Expr::Var(Var::X1),
                "x2" | "y" => Expr::Var(Var::X2),
                "t" => Expr::Var(Var::T),
                "pi" => Expr::Num(PI),
                _ => {
                    let f = Func::lookup(&name).ok_or_else(|| format!("unknown name '{name}'"))?;
                    match self.next() {
                        Some(Tok::LParen) => {}
                        _ => return Err(format!("expected '(' after {name}")),
                    }
                    let arg = self.parse(0)?;
                    self.expect_rparen()?;
                    Expr::Call(f, Box::new(arg))
                }
            },
            Some(t) => return Err(format!("unexpected token {t:?}")),
            None => return Err("unexpected end of expression".into()),
        };
        while let Some(Tok::Op(op)) = self.peek() {
            let op = *op;
            let (l, r) = infix_power(op);
            if l < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.parse(r)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }
}

pub fn parse_expr(src: &str) -> std::result::Result<Expr, String> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.parse(0)?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing input at token {}", p.pos + 1));
    }
    Ok(e)
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_expr(s).map_err(|message| Error::Parse {
            key: "expression".into(),
            message,
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(Var::X1) => write!(f, "x1"),
            Expr::Var(Var::X2) => write!(f, "x2"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {op} {r})"),
            Expr::Call(func, e) => write!(f, "{}({e})", format!("{func:?}").to_lowercase()),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ev(s: &str, x1: f64, x2: f64) -> f64 {
        parse_expr(s).unwrap().eval(x1, x2, 0.0)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0), -4.0);
        assert_eq!(ev("2e-1 * 10", 0.0, 0.0), 2.0);
    }

    #[test]
    fn variables_and_functions() {
        let v = ev("1 + 0.1*sin(2*pi*x1)*cos(2*pi*x2)", 0.25, 0.0);
        assert!((v - 1.1).abs() < 1e-15);
        assert_eq!(ev("abs(x - y)", 0.2, 0.7), (0.2f64 - 0.7).abs());
        let e = parse_expr("exp(-t)").unwrap();
        assert!(e.uses(Var::T) && !e.uses(Var::X1));
        assert_eq!(
            parse_expr("sqrt(4)*pi").unwrap().as_constant(),
            Some(2.0 * PI)
        );
    }

    #[test]
    fn errors_are_reported() {
        for bad in ["", "1 +", "sin 1", "foo(1)", "(1", "1 2", "3 $ 4", "x3"] {
            assert!(parse_expr(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        let e = parse_expr("-x1^2 + 3*sin(2*pi*x2)/t").unwrap();
        let again = parse_expr(&e.to_string()).unwrap();
        for &(a, b, t) in &[(0.1, 0.2, 0.3), (0.7, 0.9, 1.5)] {
            assert_eq!(e.eval(a, b, t), again.eval(a, b, t));
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            prop_oneof![Just(Var::X1), Just(Var::X2), Just(Var::T)].prop_map(Expr::Var),
        ];
        let funcs = [
            Func::Sin,
            Func::Cos,
            Func::Tan,
            Func::Exp,
            Func::Log,
            Func::Sqrt,
            Func::Tanh,
            Func::Abs,
        ];
        leaf.prop_recursive(4, 24, 2, move |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop::sample::select(vec!['+', '-', '*', '/', '^']),
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::Bin(op, Box::new(l), Box::new(r))),
                (prop::sample::select(funcs.to_vec()), inner)
                    .prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn printed_expressions_parse_back(e in arb_expr()) {
            let back = parse_expr(&e.to_string()).unwrap();
            prop_assert_eq!(back, e);
        }
    }
}
