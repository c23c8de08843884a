//! Multivariate polynomials, expression trees and the expression parser.

mod expr;
mod monomial;
mod parse;
mod polynomial;

pub use expr::{Expr, ExprDisplay, Func};
pub use monomial::{monomials_up_to, Monomial, MonomialDisplay};
pub use parse::{is_identifier, parse_expr, ParseError, ParseErrorKind, Scope};
pub use polynomial::{PolyDisplay, Polynomial, COEFF_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Indicator,
    /// State appended by recasting.
    Auxiliary,
}

/// Dense variable ids in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarTable {
    names: Vec<String>,
    kinds: Vec<VarKind>,
}

impl VarTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn continuous<S: AsRef<str>>(names: &[S]) -> Self {
        let mut t = Self::new();
        for n in names {
            t.push(n.as_ref(), VarKind::Continuous);
        }
        t
    }

    pub fn push(&mut self, name: &str, kind: VarKind) -> usize {
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn kind(&self, id: usize) -> VarKind {
        self.kinds[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.id(name).is_some()
    }

    pub fn ids_of(&self, kind: VarKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.kinds[i] == kind).collect()
    }

    /// A name not yet in the table, built from `base` (`base`, `base_2`, …).
    pub fn fresh_name(&self, base: &str) -> String {
        if !self.contains(base) {
            return base.to_string();
        }
        (2..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| !self.contains(n))
            .unwrap()
    }
}
