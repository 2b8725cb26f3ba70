//! Tiny arithmetic expression grammar for user-defined coefficients.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | var | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos'
//! var    := 'y' | 'y1' | 'y2' | 'x' | 'x1' | 'x2'
//! ```
//!
//! Unicode spellings `π`, `×`, `÷`, `−`, `y₁`, `y₂`, `x₁`, `x₂` are accepted.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
}

impl Node {
    fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(i) => p.get(*i).copied().unwrap_or(0.0),
            Node::Neg(a) => -a.eval(p),
            Node::Add(a, b) => a.eval(p) + b.eval(p),
            Node::Sub(a, b) => a.eval(p) - b.eval(p),
            Node::Mul(a, b) => a.eval(p) * b.eval(p),
            Node::Div(a, b) => a.eval(p) / b.eval(p),
            Node::Sin(a) => a.eval(p).sin(),
            Node::Cos(a) => a.eval(p).cos(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Num(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Sin(a) | Node::Cos(a) => a.max_var(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }
}

/// A parsed expression in the coordinates of a point (`y` on the cell, `x` on Ω).
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some((col, t)) = p.tokens.get(p.pos) {
            return Err(Error::Expression {
                column: *col,
                message: format!("unexpected token {t:?}"),
            });
        }
        Ok(Self {
            source: src.to_string(),
            root,
        })
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.root.eval(p)
    }

    /// Number of coordinates the expression refers to (0 for constants).
    pub fn arity(&self) -> usize {
        self.root.max_var().map_or(0, |i| i + 1)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
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

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                out.push((col, Tok::LParen));
                i += 1
            }
            ')' => {
                out.push((col, Tok::RParen));
                i += 1
            }
            '+' | '-' | '*' | '/' => {
                out.push((col, Tok::Op(c)));
                i += 1
            }
            '−' => {
                out.push((col, Tok::Op('-')));
                i += 1
            }
            '×' | '·' => {
                out.push((col, Tok::Op('*')));
                i += 1
            }
            '÷' => {
                out.push((col, Tok::Op('/')));
                i += 1
            }
            'π' => {
                out.push((col, Tok::Num(std::f64::consts::PI)));
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let save = i;
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    if i < chars.len() && chars[i].is_ascii_digit() {
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = save;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| Error::Expression {
                    column: col,
                    message: format!("bad number '{text}'"),
                })?;
                out.push((col, Tok::Num(v)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '₁' || chars[i] == '₂')
                {
                    i += 1;
                }
                let text: String = chars[start..i]
                    .iter()
                    .map(|&c| match c {
                        '₁' => '1',
                        '₂' => '2',
                        c => c,
                    })
                    .collect();
                out.push((col, Tok::Ident(text)));
            }
            other => {
                return Err(Error::Expression {
                    column: col,
                    message: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(c, _)| *c)
            .unwrap_or_else(|| self.tokens.last().map_or(1, |(c, _)| c + 1))
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Expression {
            column: self.column(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if let Some(Tok::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| self.err("unexpected end of expression"))?;
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "x" | "x1" | "y" | "y1" => Ok(Node::Var(0)),
                    "x2" | "y2" => Ok(Node::Var(1)),
                    "sin" | "cos" => {
                        if self.peek() != Some(&Tok::LParen) {
                            return Err(self.err(format!("expected '(' after {name}")));
                        }
                        self.pos += 1;
                        let arg = Box::new(self.expr()?);
                        self.expect_rparen()?;
                        Ok(if name == "sin" { Node::Sin(arg) } else { Node::Cos(arg) })
                    }
                    other => {
                        self.pos -= 1;
                        Err(self.err(format!("unknown identifier '{other}'")))
                    }
                }
            }
            other => Err(self.err(format!("unexpected token {other:?}"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err("expected ')'"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("2 + sin(2*pi*y)").unwrap();
        assert!((e.eval(&[0.25]) - 3.0).abs() < 1e-15);
        let e = Expr::parse("1 - 2 * 3 / 4").unwrap();
        assert_eq!(e.eval(&[]), 1.0 - 1.5);
        let e = Expr::parse("-(1 - 3) * 2").unwrap();
        assert_eq!(e.eval(&[]), 4.0);
    }

    #[test]
    fn unicode_spellings() {
        let e = Expr::parse("sin(2×π×y₁) × cos(2π÷2 × y₂ − 1)").unwrap_err();
        // implicit multiplication is not part of the grammar
        assert!(matches!(e, Error::Expression { .. }));
        let e = Expr::parse("sin(2×π×y₁) × cos(2×π÷2×y₂ − 1)").unwrap();
        let v = e.eval(&[0.1, 0.3]);
        assert!((v - (2.0 * PI * 0.1).sin() * (PI * 0.3 - 1.0).cos()).abs() < 1e-15);
        assert_eq!(e.arity(), 2);
    }

    #[test]
    fn scientific_literals() {
        let e = Expr::parse("1.5e-3 + 2E2").unwrap();
        assert_eq!(e.eval(&[]), 1.5e-3 + 200.0);
        assert_eq!(e.arity(), 0);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("1 + foo(y)") {
            Err(Error::Expression { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("1 $ 2").is_err());
    }
}
