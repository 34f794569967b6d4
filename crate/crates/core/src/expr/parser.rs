use std::collections::BTreeSet;

use super::{Expression, Node, ParseError};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
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
struct Spanned {
    token: Token,
    pos: usize,
}

fn lex(source: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let token = match c {
            b'+' => Token::Plus,
            b'-' => Token::Minus,
            b'*' => Token::Star,
            b'/' => Token::Slash,
            b'^' => Token::Caret,
            b'(' => Token::LParen,
            b')' => Token::RParen,
            b'0'..=b'9' | b'.' => {
                let end = scan_number(bytes, i);
                let text = &source[i..end];
                let value: f64 =
                    text.parse().map_err(|_| ParseError::syntax(start, format!("malformed number `{text}`")))?;
                i = end;
                out.push(Spanned { token: Token::Number(value), pos: start });
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                let mut end = i + 1;
                while end < bytes.len() && bytes[end].is_ascii_alphanumeric() {
                    end += 1;
                }
                let ident = source[i..end].to_string();
                i = end;
                out.push(Spanned { token: Token::Ident(ident), pos: start });
                continue;
            }
            _ => {
                let ch = source[i..].chars().next().unwrap_or('?');
                return Err(ParseError::syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push(Spanned { token, pos: start });
        i += 1;
    }
    Ok(out)
}

/// Digits, optional fraction, optional exponent. The exponent is only
/// consumed when at least one digit follows `e[+-]`.
fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
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
    i
}

/// Recognizes `x<digits>`; returns the 1-based index.
pub(crate) fn variable_index(ident: &str) -> Option<Result<usize, ()>> {
    let digits = ident.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(digits.parse::<usize>().map_err(|_| ()))
}

pub(crate) fn is_variable_name(ident: &str) -> bool {
    variable_index(ident).is_some()
}

struct Parser<'a> {
    tokens: Vec<Spanned>,
    cursor: usize,
    end: usize,
    dimension: usize,
    parameters: &'a BTreeSet<String>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|s| &s.token)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.cursor).map_or(self.end, |s| s.pos)
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.tokens.get(self.cursor).cloned();
        self.cursor += 1;
        t
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Token::Slash) => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        if let Some(Token::Minus) = self.peek() {
            self.bump();
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.bump();
            let exponent = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Spanned { token: Token::Number(v), .. }) => Ok(Node::Const(v)),
            Some(Spanned { token: Token::Ident(name), .. }) => self.identifier(name, pos),
            Some(Spanned { token: Token::LParen, .. }) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Spanned { token: Token::RParen, .. }) => Ok(inner),
                    Some(s) => Err(ParseError::syntax(s.pos, "expected `)`")),
                    None => Err(ParseError::syntax(self.end, "expected `)` before end of input")),
                }
            }
            Some(s) => Err(ParseError::syntax(s.pos, format!("unexpected token {:?}", s.token))),
            None => Err(ParseError::syntax(self.end, "unexpected end of input")),
        }
    }

    fn identifier(&self, name: String, pos: usize) -> Result<Node, ParseError> {
        match variable_index(&name) {
            Some(Ok(i)) if (1..=self.dimension).contains(&i) => Ok(Node::Var(i - 1)),
            Some(_) => Err(ParseError::VariableOutOfRange { position: pos, name, dimension: self.dimension }),
            None if self.parameters.contains(&name) => Ok(Node::Param(name)),
            None => Err(ParseError::UnknownIdentifier { position: pos, name }),
        }
    }
}

pub(super) fn parse(source: &str, dimension: usize, parameters: &BTreeSet<String>) -> Result<Expression, ParseError> {
    let tokens = lex(source)?;
    if tokens.is_empty() {
        return Err(ParseError::syntax(0, "empty expression"));
    }
    let mut p = Parser { tokens, cursor: 0, end: source.len(), dimension, parameters };
    let root = p.expr()?;
    if let Some(s) = p.tokens.get(p.cursor) {
        return Err(ParseError::syntax(s.pos, format!("unexpected trailing token {:?}", s.token)));
    }
    Ok(Expression::from_node(root, dimension))
}
