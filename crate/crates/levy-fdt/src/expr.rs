//! Minimal arithmetic-expression evaluator for custom model definitions.
//!
//! Grammar: `+ - * / ^`, parentheses, unary minus, the functions
//! `tanh exp sqrt abs`, numeric literals, the constants `pi` and `e`, and the
//! state variable `x`. `^` is right-associative and binds tighter than unary
//! minus applied to its base.

use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Fn1(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy)]
enum Func {
    Tanh,
    Exp,
    Sqrt,
    Abs,
}

/// A parsed scalar expression in one variable `x`.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    text: String,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let toks = lex(text)?;
        let mut p = Parser { toks, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!("trailing input in `{text}`")));
        }
        Ok(Self { root, text: text.to_string() })
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.root, x)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

fn lex(s: &str) -> Result<Vec<Tok>, Error> {
    let mut out = Vec::new();
    let bytes: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' | '\u{2212}' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let lit: String = bytes[start..i].iter().collect();
                let v = lit
                    .parse::<f64>()
                    .map_err(|_| Error::Expr(format!("bad number `{lit}`")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Tok::Ident(bytes[start..i].iter().collect()));
            }
            other => return Err(Error::Expr(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Node, Error> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.next();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, Error> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.next();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, Error> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.next();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, Error> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.next();
            let exp = self.unary()?; // right-assoc, allows -x in exponent
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, Error> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::Expr("missing `)`".into())),
                }
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Node::Var),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                "tanh" | "exp" | "sqrt" | "abs" => {
                    let f = match name.as_str() {
                        "tanh" => Func::Tanh,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        _ => Func::Abs,
                    };
                    match self.next() {
                        Some(Tok::LParen) => {
                            let inner = self.expr()?;
                            match self.next() {
                                Some(Tok::RParen) => Ok(Node::Fn1(f, Box::new(inner))),
                                _ => Err(Error::Expr(format!("missing `)` after {name}"))),
                            }
                        }
                        _ => Err(Error::Expr(format!("expected `(` after {name}"))),
                    }
                }
                other => Err(Error::Expr(format!("unknown identifier `{other}`"))),
            },
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn eval(n: &Node, x: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var => x,
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => eval(a, x).powf(eval(b, x)),
        Node::Fn1(f, a) => {
            let v = eval(a, x);
            match f {
                Func::Tanh => v.tanh(),
                Func::Exp => v.exp(),
                Func::Sqrt => v.sqrt(),
                Func::Abs => v.abs(),
            }
        }
    }
}
