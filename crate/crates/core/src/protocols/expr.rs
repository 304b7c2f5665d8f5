//! Polynomial expressions in the simplex coordinates `x1 .. xd`.
//!
//! Grammar: `expr := term (('+' | '-') term)*`, `term := factor ('*' factor)*`,
//! `factor := '-' factor | atom ('^' uint)?`,
//! `atom := number | 'x' index | '(' expr ')'`.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message} at column {column} in `{source_text}`")]
pub struct ExprError {
    pub message: String,
    pub column: usize,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
}

/// A parsed polynomial; keeps its source text for echoing back into configs.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    source: String,
    root: Node,
    max_var: usize,
}

impl Polynomial {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            max_var: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: src.to_string(),
            root,
            max_var: p.max_var,
        })
    }

    /// Largest variable index referenced (1-based; 0 if constant).
    pub fn max_var(&self) -> usize {
        self.max_var
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Pow(a, k) => eval(a, x).powi(*k as i32),
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    max_var: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError {
            message: message.to_string(),
            column: self.pos + 1,
            source_text: self.src.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                b'+' => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                b'-' => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a non-negative integer exponent"));
            }
            let k: u32 = self.src[start..self.pos]
                .parse()
                .map_err(|_| self.error("exponent too large"))?;
            return Ok(Node::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'x') => {
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let idx: usize = self.src[start..self.pos]
                    .parse()
                    .map_err(|_| self.error("expected a variable index after `x`"))?;
                if idx == 0 {
                    return Err(self.error("variables are numbered from x1"));
                }
                self.max_var = self.max_var.max(idx);
                Ok(Node::Var(idx - 1))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.bytes.len() {
                    let c = self.bytes[self.pos];
                    let exp_sign = (c == b'+' || c == b'-')
                        && self.pos > start
                        && matches!(self.bytes[self.pos - 1], b'e' | b'E');
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                self.src[start..self.pos]
                    .parse::<f64>()
                    .map(Node::Num)
                    .map_err(|_| self.error("malformed number"))
            }
            _ => Err(self.error("expected a number, variable or `(`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates() {
        let p = Polynomial::parse("x1*x2*(0.5 - 4*(x1-0.25)*(x1-0.5)*(x1-0.75))").unwrap();
        let x = [0.3, 0.7];
        let expected = 0.3 * 0.7 * (0.5 - 4.0 * (0.05) * (-0.2) * (-0.45));
        assert!((p.eval(&x) - expected).abs() < 1e-15);
        assert_eq!(p.max_var(), 2);
        let q = Polynomial::parse("-x1^2 + 2.5e-1 * x3").unwrap();
        assert!((q.eval(&[0.5, 0.0, 1.0]) - 0.0).abs() < 1e-15);
        assert_eq!(Polynomial::parse("-(2)^2").unwrap().eval(&[]), -4.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Polynomial::parse("x0").is_err());
        assert!(Polynomial::parse("x1 +").is_err());
        assert!(Polynomial::parse("(x1").is_err());
        assert!(Polynomial::parse("x1 ^ y").is_err());
        let e = Polynomial::parse("x1 $ 2").unwrap_err();
        assert_eq!(e.column, 4);
    }
}
