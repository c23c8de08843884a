//! Recursive-descent parser for the model expression language.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := unary (('*'|'/') unary)*
//! unary  := ('-'|'+') unary | factor
//! factor := base ('^' exponent)?
//! base   := number | ident | '(' expr ')' | func '(' expr ')'
//! func   := exp | log | sin | cos
//! ```
//!
//! Exponents are integers, optionally signed or parenthesised, or a
//! parameter whose value is an integer.

use std::collections::BTreeMap;

use thiserror::Error;

use super::expr::{Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("exponent must be an integer")]
    NonIntegerExponent,
    #[error("unsupported function `{0}`")]
    UnsupportedFunction(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Identifier resolution: variables become `Expr::Var`, parameters are
/// substituted numerically.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub vars: &'a [String],
    pub params: &'a BTreeMap<String, f64>,
}

impl<'a> Scope<'a> {
    pub fn new(vars: &'a [String], params: &'a BTreeMap<String, f64>) -> Self {
        Self { vars, params }
    }
}

pub fn parse_expr(text: &str, scope: &Scope<'_>) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        scope,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err(ParseErrorKind::Syntax(format!(
            "unexpected `{}`",
            p.src[p.pos] as char
        ))));
    }
    Ok(e)
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Parser<'s, 'a> {
    src: &'s [u8],
    pos: usize,
    scope: &'s Scope<'a>,
}

impl Parser<'_, '_> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
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

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(ParseErrorKind::Syntax(format!("expected `{}`", c as char))))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut items = vec![self.term()?];
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    items.push(self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    items.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Expr::sum(items) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::product(vec![acc, rhs]);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::quotient(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.factor(),
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let k = self.exponent()?;
            return Ok(Expr::pow(base, k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let k = self.exponent()?;
                self.expect(b')')?;
                Ok(k)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.exponent()?)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                let v = self.number()?;
                if v != v.trunc() || v.abs() > i32::MAX as f64 {
                    self.pos = start;
                    return Err(self.err(ParseErrorKind::NonIntegerExponent));
                }
                Ok(v as i32)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                let name = self.ident();
                match self.scope.params.get(&name) {
                    Some(&v) if v == v.trunc() && v.abs() <= i32::MAX as f64 => Ok(v as i32),
                    Some(_) => {
                        self.pos = start;
                        Err(self.err(ParseErrorKind::NonIntegerExponent))
                    }
                    None => {
                        self.pos = start;
                        Err(self.err(ParseErrorKind::NonIntegerExponent))
                    }
                }
            }
            _ => Err(self.err(ParseErrorKind::Syntax("expected exponent".into()))),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(v)
            }
            Err(_) => Err(self.err(ParseErrorKind::Syntax(format!("bad number `{text}`")))),
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                let name = self.ident();
                if self.peek() == Some(b'(') {
                    let Some(func) = Func::from_name(&name) else {
                        self.pos = start;
                        return Err(self.err(ParseErrorKind::UnsupportedFunction(name)));
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return Ok(Expr::call(func, arg));
                }
                if let Some(id) = self.scope.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(id));
                }
                if let Some(&v) = self.scope.params.get(&name) {
                    return Ok(Expr::Const(v));
                }
                self.pos = start;
                Err(self.err(ParseErrorKind::UnknownIdentifier(name)))
            }
            Some(c) => Err(self.err(ParseErrorKind::Syntax(format!("unexpected `{}`", c as char)))),
            None => Err(self.err(ParseErrorKind::Syntax("unexpected end of input".into()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::Polynomial;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unary_minus_is_scaled_var() {
        let v = vars(&["x"]);
        let params = BTreeMap::new();
        let e = parse_expr("-x", &Scope::new(&v, &params)).unwrap();
        assert_eq!(e, Expr::Product(vec![Expr::Const(-1.0), Expr::Var(0)]));
        let e = parse_expr("-x^2", &Scope::new(&v, &params)).unwrap();
        assert_eq!(e.eval(&[3.0]), -9.0);
    }

    #[test]
    fn nested_elementary_call() {
        let v = vars(&["x"]);
        let params = BTreeMap::new();
        let e = parse_expr("exp(sin(log(x)))", &Scope::new(&v, &params)).unwrap();
        let want = Expr::Call(
            Func::Exp,
            Box::new(Expr::Call(Func::Sin, Box::new(Expr::Call(Func::Log, Box::new(Expr::Var(0)))))),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn parameters_substitute_numerically() {
        let v = vars(&["v"]);
        let params = BTreeMap::from([("p".to_string(), 0.05), ("R".to_string(), 5.0)]);
        let e = parse_expr("p*v/R", &Scope::new(&v, &params)).unwrap();
        let poly = e.to_polynomial().unwrap();
        assert!(poly.approx_eq(&Polynomial::var(0).scale(0.01), 1e-16));
    }

    #[test]
    fn error_offsets() {
        let v = vars(&["x"]);
        let params = BTreeMap::from([("h".to_string(), 0.5)]);
        let scope = Scope::new(&v, &params);
        let err = parse_expr("x + zz", &scope).unwrap_err();
        assert_eq!(err.offset, 4);
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("zz".into()));
        let err = parse_expr("x^1.5", &scope).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::NonIntegerExponent);
        let err = parse_expr("x^h", &scope).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::NonIntegerExponent);
        let err = parse_expr("sqrt(x)", &scope).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnsupportedFunction("sqrt".into()));
        let err = parse_expr("(x + 1", &scope).unwrap_err();
        assert_eq!(err.offset, 6);
        assert!(parse_expr("x +* 2", &scope).is_err());
    }

    #[test]
    fn parameter_exponents_and_scientific_numbers() {
        let v = vars(&["v"]);
        let params = BTreeMap::from([("n".to_string(), 3.0)]);
        let scope = Scope::new(&v, &params);
        let e = parse_expr("(v/2)^n + 1.5e-1 + v^(-1) + v^-2", &scope).unwrap();
        let x: f64 = 2.0;
        assert!((e.eval(&[x]) - (1.0 + 0.15 + 0.5 + 0.25)).abs() < 1e-15);
    }
}
