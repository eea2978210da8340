//! Formulas for data fields: numbers, the variables x, t, W (and s for
//! nonlinearities), pi, + - * / ^, and sin, cos, exp.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    T,
    W,
    S,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::T => "t",
            Var::W => "W",
            Var::S => "s",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the formula.
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos + 1, self.msg)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Env {
    pub x: f64,
    pub t: f64,
    pub w: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    /// Parses `src`, accepting only the variables in `allowed`.
    pub fn parse(src: &str, allowed: &[Var]) -> Result<Self, ParseError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, allowed };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err(format!("unexpected '{}'", p.src[p.pos] as char)));
        }
        Ok(Self { root, source: src.to_string() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, env: &Env) -> f64 {
        eval(&self.root, env)
    }

    /// True when the formula mentions `v`.
    pub fn uses(&self, v: Var) -> bool {
        fn walk(n: &Node, v: Var) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(u) => *u == v,
                Node::Neg(a) | Node::Call(_, a) => walk(a, v),
                Node::Bin(_, a, b) | Node::Pow(a, b) => walk(a, v) || walk(b, v),
            }
        }
        walk(&self.root, v)
    }
}

fn eval(n: &Node, env: &Env) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(Var::X) => env.x,
        Node::Var(Var::T) => env.t,
        Node::Var(Var::W) => env.w,
        Node::Var(Var::S) => env.s,
        Node::Neg(a) => -eval(a, env),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
            }
        }
        Node::Pow(a, b) => {
            let base = eval(a, env);
            // Integer literal exponents go through powi so polynomials stay exact.
            match **b {
                Node::Num(e) if e.fract() == 0.0 && e.abs() <= 64.0 => base.powi(e as i32),
                _ => base.powf(eval(b, env)),
            }
        }
        Node::Call(f, a) => {
            let v = eval(a, env);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => Op::Add,
                Some(b'-') => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => Op::Mul,
                Some(b'/') => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    // -x^2 parses as -(x^2); 2^3^2 is 2^(3^2).
    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of formula")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(format!("unexpected '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ParseError { pos: start, msg: format!("bad number '{text}'") })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        };
        if let Some(f) = func {
            if !self.eat(b'(') {
                return Err(self.err(format!("expected '(' after {name}")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(Node::Call(f, Box::new(arg)));
        }
        if name == "pi" {
            return Ok(Node::Num(std::f64::consts::PI));
        }
        let var = match name {
            "x" => Var::X,
            "t" => Var::T,
            "W" => Var::W,
            "s" => Var::S,
            _ => return Err(ParseError { pos: start, msg: format!("unknown name '{name}'") }),
        };
        if !self.allowed.contains(&var) {
            let names: Vec<&str> = self.allowed.iter().map(|v| v.name()).collect();
            return Err(ParseError {
                pos: start,
                msg: format!("variable '{name}' not allowed here (allowed: {})", names.join(", ")),
            });
        }
        Ok(Node::Var(var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XTW: &[Var] = &[Var::X, Var::T, Var::W];

    fn at(src: &str, x: f64, t: f64, w: f64) -> f64 {
        Expr::parse(src, XTW).unwrap().eval(&Env { x, t, w, s: 0.0 })
    }

    #[test]
    fn precedence() {
        assert_eq!(at("1 + 2 * 3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(at("-2^2", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(at("2^3^2", 0.0, 0.0, 0.0), 512.0);
        assert_eq!(at("(1 - x) / 2", 0.5, 0.0, 0.0), 0.25);
        assert_eq!(at("8 / 2 / 2", 0.0, 0.0, 0.0), 2.0);
        assert_eq!(at("1.5e-1 * W", 0.0, 0.0, 2.0), 0.15 * 2.0);
    }

    #[test]
    fn functions_and_pi() {
        let v = at("(1 + 0.3*W) * sin(pi*x)", 0.5, 0.0, 1.0);
        assert!((v - 1.3).abs() < 1e-15);
        assert_eq!(at("exp(0) + cos(0)", 0.0, 0.0, 0.0), 2.0);
        assert_eq!(at("x^3 - 2*x + t", 2.0, 1.0, 0.0), 5.0);
    }

    #[test]
    fn errors_point_at_the_problem() {
        let e = Expr::parse("x + y", XTW).unwrap_err();
        assert_eq!(e.pos, 4);
        let e = Expr::parse("sin x", XTW).unwrap_err();
        assert!(e.msg.contains("'('"));
        assert!(Expr::parse("(x", XTW).is_err());
        assert!(Expr::parse("x +", XTW).is_err());
        assert!(Expr::parse("s^3", XTW).is_err());
        assert!(Expr::parse("s^3", &[Var::S]).unwrap().uses(Var::S));
        assert!(Expr::parse("2 3", XTW).is_err());
    }
}
