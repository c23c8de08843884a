use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use super::monomial::Monomial;

/// Coefficients with magnitude below this are dropped on canonicalization.
pub const COEFF_EPS: f64 = 1e-14;

/// Sparse multivariate polynomial with `f64` coefficients, terms kept in
/// graded-lex order.
#[derive(Clone, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn var(id: usize) -> Self {
        Self::term(Monomial::var(id), 1.0)
    }

    pub fn term(m: Monomial, c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(m, c);
        p
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                let v = *o.get() + c;
                if v.abs() < COEFF_EPS {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            Entry::Vacant(slot) => {
                if c.abs() >= COEFF_EPS {
                    slot.insert(c);
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one())
    }

    /// `Some(c)` when the polynomial has no non-constant terms.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => self.terms.get(&Monomial::one()).copied(),
            _ => None,
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms.keys().map(|m| m.exponent(var)).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn variables(&self) -> Vec<usize> {
        let mut vs: Vec<usize> = self.terms.keys().flat_map(|m| m.vars().collect::<Vec<_>>()).collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn contains_var(&self, var: usize) -> bool {
        self.terms.keys().any(|m| m.contains(var))
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, &v)| (m.clone(), v * c)))
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    /// Formal partial derivative with respect to `var`.
    pub fn diff(&self, var: usize) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().filter_map(|(m, &c)| {
            m.divide_var(var).map(|(e, rest)| (rest, c * e as f64))
        }))
    }

    /// Replaces each variable found in `subst` by its image; other
    /// variables map to themselves.
    pub fn substitute(&self, subst: &BTreeMap<usize, Polynomial>) -> Polynomial {
        let mut out = Polynomial::zero();
        let mut pow_cache: BTreeMap<(usize, u32), Polynomial> = BTreeMap::new();
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(c);
            let mut kept = Vec::new();
            for &(v, e) in m.pairs() {
                match subst.get(&v) {
                    Some(img) => {
                        let p = pow_cache.entry((v, e)).or_insert_with(|| img.pow(e)).clone();
                        term = &term * &p;
                    }
                    None => kept.push((v, e)),
                }
            }
            if !kept.is_empty() {
                term = term.mul_monomial(&Monomial::from_pairs(kept));
            }
            out = &out + &term;
        }
        out
    }

    /// Substitutes numeric values for some variables.
    pub fn partial_eval(&self, values: &BTreeMap<usize, f64>) -> Polynomial {
        let subst = values.iter().map(|(&v, &x)| (v, Polynomial::constant(x))).collect();
        self.substitute(&subst)
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(k, &c)| (k.mul(m), c)))
    }

    /// Applies a monomial-level rewrite (returning `None` to drop a term).
    pub fn map_monomials(&self, f: impl Fn(&Monomial) -> Option<Monomial>) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().filter_map(|(m, &c)| f(m).map(|n| (n, c))))
    }

    pub fn remap_vars(&self, map: impl Fn(usize) -> usize) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, &c)| (m.remap(&map), c)))
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    /// `true` when both polynomials agree term by term within `tol`.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        let diff = self - other;
        diff.terms.values().all(|c| c.abs() <= tol)
    }

    pub fn display_with<'a>(&'a self, names: &'a [String]) -> PolyDisplay<'a> {
        PolyDisplay { poly: self, names }
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(m, c)| format!("{c}*{m:?}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

pub struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    names: &'a [String],
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.poly.terms().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if i == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if (mag - 1.0).abs() == 0.0 {
                write!(f, "{}", m.display_with(self.names))?;
            } else {
                write!(f, "{mag}*{}", m.display_with(self.names))?;
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                *acc.entry(a.mul(b)).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| c.abs() >= COEFF_EPS);
        Polynomial { terms: acc }
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: &Polynomial) -> Polynomial {
                (&self).$m(rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl From<f64> for Polynomial {
    fn from(c: f64) -> Self {
        Polynomial::constant(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Polynomial {
        Polynomial::var(0)
    }
    fn y() -> Polynomial {
        Polynomial::var(1)
    }

    #[test]
    fn difference_of_squares() {
        let one = Polynomial::constant(1.0);
        let p = (&x() + &one) * (&x() - &one);
        let expected = Polynomial::from_terms([(Monomial::var_pow(0, 2), 1.0), (Monomial::one(), -1.0)]);
        assert_eq!(p, expected);
    }

    #[test]
    fn squares_without_rewriting() {
        let vy = &x() * &y();
        let sq = &vy * &vy;
        assert_eq!(sq, Polynomial::term(Monomial::from_pairs([(0, 2), (1, 2)]), 1.0));
        let b = Polynomial::var(3);
        assert_eq!(&b * &b, Polynomial::term(Monomial::var_pow(3, 2), 1.0));
    }

    #[test]
    fn derivatives() {
        let x3 = x().pow(3);
        assert_eq!(x3.diff(0), Polynomial::term(Monomial::var_pow(0, 2), 3.0));
        assert_eq!((&x() * &y()).diff(1), x());
        assert!(Polynomial::constant(4.0).diff(0).is_zero());
    }

    #[test]
    fn substitution_halving_reset() {
        let v2 = x().pow(2);
        let subst = BTreeMap::from([(0, x().scale(0.5))]);
        assert_eq!(v2.substitute(&subst), x().pow(2).scale(0.25));
        let id = BTreeMap::from([(0, x())]);
        assert_eq!(x().substitute(&id), x());
    }

    #[test]
    fn substitution_indicator_evaluation() {
        // vars: v=0, b_ss=1, b_off=2
        let v = Polynomial::var(0);
        let b_ss = Polynomial::var(1);
        let b_off = Polynomial::var(2);
        let subst = BTreeMap::from([
            (2, Polynomial::zero()),
            (1, Polynomial::constant(1.0)),
            (0, Polynomial::var(5)),
        ]);
        assert!((&b_off * &v).substitute(&subst).is_zero());
        assert_eq!((&b_ss * &v).substitute(&subst), Polynomial::var(5));
    }

    #[test]
    fn cancellation_is_canonical() {
        let p = &x() - &x();
        assert!(p.is_zero());
        assert_eq!(p.num_terms(), 0);
    }
}
