//! Recursive-descent parser.
//!
//! Grammar:
//!
//! ```text
//! expr  := term (('+'|'-') term)*
//! term  := unary (('*'|'/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative through `unary` and binds tighter than a
//! leading minus, so `-2^2` is `-(2^2)`. A minus applied directly to a
//! numeric literal is folded into the literal.

use thiserror::Error;

use super::{Func, Node, Params, Var, VarSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    EmptyInput,
    #[error("syntax error at byte {offset}: found {found}, expected one of {}", expected.join(", "))]
    SyntaxError {
        offset: usize,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    BadArity {
        name: &'static str,
        offset: usize,
        expected: &'static str,
        found: usize,
    },
}

const EXPECT_OPERAND: [&str; 4] = ["number", "identifier", "'('", "unary '-'"];

#[derive(Clone, Debug, PartialEq)]
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
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::SyntaxError {
                    offset: start,
                    found: format!("malformed number `{text}`"),
                    expected: vec!["number"],
                })?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::SyntaxError {
                    offset: start,
                    found: format!("character {ch:?}"),
                    expected: vec!["operator", "number", "identifier", "'('", "')'", "','"],
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: VarSet,
    params: &'a Params,
}

pub(super) fn parse(src: &str, vars: VarSet, params: &Params) -> Result<Node, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        vars,
        params,
    };
    let node = p.expr()?;
    match p.peek() {
        Tok::End => Ok(node),
        _ => Err(p.unexpected(&["operator", "end of input"])),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&'static str]) -> ParseError {
        ParseError::SyntaxError {
            offset: self.offset(),
            found: self.peek().describe(),
            expected: expected.to_vec(),
        }
    }

    fn expect(&mut self, tok: Tok, label: &'static str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[label]))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => Node::Add,
                Tok::Minus => Node::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = op(Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => Node::Mul,
                Tok::Slash => Node::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = op(Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(match self.unary()? {
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Node::Const(n))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let offset = self.offset();
                self.bump();
                if *self.peek() == Tok::LParen {
                    return self.call(&name, offset);
                }
                if let Some(var) = Var::from_name(&name) {
                    if self.vars.contains(var) {
                        return Ok(Node::Var(var));
                    }
                }
                if let Some(value) = self.params.get(&name) {
                    return Ok(Node::Const(*value));
                }
                if Func::from_name(&name).is_some() {
                    return Err(self.unexpected(&["'('"]));
                }
                Err(ParseError::UnknownIdentifier { name, offset })
            }
            _ => Err(self.unexpected(&EXPECT_OPERAND)),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ParseError> {
        let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownIdentifier {
            name: name.to_string(),
            offset,
        })?;
        self.expect(Tok::LParen, "'('")?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        if *self.peek() != Tok::RParen {
            return Err(self.unexpected(&["','", "')'"]));
        }
        self.bump();
        let (ok, expected) = match func {
            Func::Exp | Func::Log | Func::Abs => (args.len() == 1, "exactly 1"),
            Func::Min | Func::Max => (args.len() >= 2, "at least 2"),
        };
        if !ok {
            return Err(ParseError::BadArity {
                name: func.name(),
                offset,
                expected,
                found: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}
