//! Tiny arithmetic grammar for the `f` term of a custom discrepancy.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := '-' unary | atom
//! atom   := number | 'w' index | func '(' expr (',' expr)* ')' | '(' expr ')'
//! func   := abs | sqrt | pow
//! ```
//! Coordinates are 1-based: `w1` is the first weight.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Sqrt(Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            chars: src.chars().collect(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => w.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(w),
            Expr::Add(a, b) => a.eval(w) + b.eval(w),
            Expr::Sub(a, b) => a.eval(w) - b.eval(w),
            Expr::Mul(a, b) => a.eval(w) * b.eval(w),
            Expr::Abs(a) => a.eval(w).abs(),
            Expr::Sqrt(a) => a.eval(w).sqrt(),
            Expr::Pow(a, b) => a.eval(w).powf(b.eval(w)),
        }
    }

    /// Largest coordinate index referenced, 0-based.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Abs(a) | Expr::Sqrt(a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Pow(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "w{}", i + 1),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Pow(a, b) => write!(f, "pow({a}, {b})"),
        }
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, msg: &str) -> Error {
        Error::Input(format!("expression error at offset {}: {msg}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.eat('*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            let exp_sign = (c == '-' || c == '+')
                && self.pos > start
                && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.error(&format!("bad number '{s}'")))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if let Some(idx) = name.strip_prefix('w') {
            if !idx.is_empty() && idx.chars().all(|c| c.is_ascii_digit()) {
                let i: usize = idx.parse().map_err(|_| self.error("bad coordinate"))?;
                if i == 0 {
                    return Err(self.error("coordinates are 1-based (w1, w2, ...)"));
                }
                return Ok(Expr::Var(i - 1));
            }
        }
        let arity = match name.as_str() {
            "abs" | "sqrt" => 1,
            "pow" => 2,
            _ => return Err(self.error(&format!("unknown identifier '{name}'"))),
        };
        if !self.eat('(') {
            return Err(self.error("expected '(' after function name"));
        }
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        if !self.eat(')') {
            return Err(self.error("expected ')'"));
        }
        if args.len() != arity {
            return Err(self.error(&format!("{name} takes {arity} argument(s)")));
        }
        let mut it = args.into_iter().map(Box::new);
        let a = it.next().expect("arity checked");
        Ok(match name.as_str() {
            "abs" => Expr::Abs(a),
            "sqrt" => Expr::Sqrt(a),
            _ => Expr::Pow(a, it.next().expect("arity checked")),
        })
    }
}
