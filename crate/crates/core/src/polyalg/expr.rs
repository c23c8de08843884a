use std::fmt;

use super::monomial::Monomial;
use super::polynomial::Polynomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
        }
    }
}

/// Expression tree over variable ids.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Quotient(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Sum with constant folding and flattening.
    pub fn sum(items: Vec<Expr>) -> Expr {
        let mut c = 0.0;
        let mut rest = Vec::new();
        for it in items {
            match it {
                Expr::Const(v) => c += v,
                Expr::Sum(inner) => {
                    for e in inner {
                        match e {
                            Expr::Const(v) => c += v,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if c != 0.0 {
            rest.push(Expr::Const(c));
        }
        match rest.len() {
            0 => Expr::zero(),
            1 => rest.pop().unwrap(),
            _ => Expr::Sum(rest),
        }
    }

    /// Product with constant folding and flattening.
    pub fn product(items: Vec<Expr>) -> Expr {
        let mut c = 1.0;
        let mut rest = Vec::new();
        for it in items {
            match it {
                Expr::Const(v) => c *= v,
                Expr::Product(inner) => {
                    for e in inner {
                        match e {
                            Expr::Const(v) => c *= v,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if c == 0.0 {
            return Expr::zero();
        }
        if c != 1.0 || rest.is_empty() {
            rest.insert(0, Expr::Const(c));
        }
        match rest.len() {
            1 => rest.pop().unwrap(),
            _ => Expr::Product(rest),
        }
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::product(vec![Expr::Const(-1.0), e])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, Expr::neg(b)])
    }

    pub fn quotient(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x / y),
            (Some(0.0), _) => Expr::zero(),
            (_, Some(y)) => Expr::product(vec![Expr::Const(1.0 / y), a]),
            _ => Expr::Quotient(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Expr, k: i32) -> Expr {
        match (base.as_const(), k) {
            (_, 0) => Expr::one(),
            (_, 1) => base,
            (Some(c), _) => Expr::Const(c.powi(k)),
            _ => Expr::Pow(Box::new(base), k),
        }
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        match arg.as_const() {
            Some(c) => Expr::Const(f.apply(c)),
            None => Expr::Call(f, Box::new(arg)),
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => point[*v],
            Expr::Sum(items) => items.iter().map(|e| e.eval(point)).sum(),
            Expr::Product(items) => items.iter().map(|e| e.eval(point)).product(),
            Expr::Quotient(a, b) => a.eval(point) / b.eval(point),
            Expr::Pow(b, k) => b.eval(point).powi(*k),
            Expr::Call(f, a) => f.apply(a.eval(point)),
        }
    }

    /// Largest variable id referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut best = None;
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                best = Some(best.map_or(*v, |b: usize| b.max(*v)));
            }
        });
        best
    }

    pub fn variables(&self) -> Vec<usize> {
        let mut vs = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                vs.push(*v);
            }
        });
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Sum(items) | Expr::Product(items) => items.iter().for_each(|e| e.visit(f)),
            Expr::Quotient(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Pow(b, _) => b.visit(f),
            Expr::Call(_, a) => a.visit(f),
        }
    }

    pub fn contains_call(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Call(..)));
        found
    }

    /// Converts to a polynomial when the expression is polynomial: integer
    /// powers are non-negative (or of constants), quotients divide by
    /// constants, and function calls only see constant arguments.
    pub fn to_polynomial(&self) -> Option<Polynomial> {
        Some(match self {
            Expr::Const(c) => Polynomial::constant(*c),
            Expr::Var(v) => Polynomial::var(*v),
            Expr::Sum(items) => {
                let mut acc = Polynomial::zero();
                for e in items {
                    acc = &acc + &e.to_polynomial()?;
                }
                acc
            }
            Expr::Product(items) => {
                let mut acc = Polynomial::constant(1.0);
                for e in items {
                    acc = &acc * &e.to_polynomial()?;
                    if acc.is_zero() {
                        break;
                    }
                }
                acc
            }
            Expr::Quotient(a, b) => {
                let den = b.to_polynomial()?.as_constant()?;
                if den == 0.0 {
                    return None;
                }
                a.to_polynomial()?.scale(1.0 / den)
            }
            Expr::Pow(b, k) => {
                let base = b.to_polynomial()?;
                if *k >= 0 {
                    base.pow(*k as u32)
                } else {
                    let c = base.as_constant()?;
                    Polynomial::constant(c.powi(*k))
                }
            }
            Expr::Call(f, a) => {
                let c = a.to_polynomial()?.as_constant()?;
                Polynomial::constant(f.apply(c))
            }
        })
    }

    pub fn is_polynomial(&self) -> bool {
        self.to_polynomial().is_some()
    }

    /// `true` when the expression is built from `+ - * /` and integer powers
    /// only (no transcendental calls on non-constant arguments).
    pub fn is_rational(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |e| {
            if let Expr::Call(_, a) = e {
                ok &= a.to_polynomial().and_then(|p| p.as_constant()).is_some();
            }
        });
        ok
    }

    /// Symbolic partial derivative with light simplification.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Sum(items) => Expr::sum(items.iter().map(|e| e.diff(var)).collect()),
            Expr::Product(items) => {
                let mut terms = Vec::new();
                for i in 0..items.len() {
                    let d = items[i].diff(var);
                    if d.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = Vec::with_capacity(items.len());
                    for (j, e) in items.iter().enumerate() {
                        factors.push(if i == j { d.clone() } else { e.clone() });
                    }
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Expr::Quotient(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                // (a/b)' = a'/b - a b'/b²
                let first = if da.is_zero() {
                    Expr::zero()
                } else {
                    Expr::quotient(da, (**b).clone())
                };
                let second = if db.is_zero() {
                    Expr::zero()
                } else {
                    Expr::quotient(
                        Expr::product(vec![(**a).clone(), db]),
                        Expr::pow((**b).clone(), 2),
                    )
                };
                Expr::sub(first, second)
            }
            Expr::Pow(b, k) => {
                let db = b.diff(var);
                if db.is_zero() {
                    return Expr::zero();
                }
                Expr::product(vec![Expr::Const(*k as f64), Expr::pow((**b).clone(), k - 1), db])
            }
            Expr::Call(f, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Log => Expr::quotient(Expr::one(), (**a).clone()),
                    Func::Sin => Expr::call(Func::Cos, (**a).clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, (**a).clone())),
                };
                Expr::product(vec![outer, da])
            }
        }
    }

    /// Replaces variables by expressions (`None` keeps the variable).
    pub fn substitute(&self, map: &impl Fn(usize) -> Option<Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => map(*v).unwrap_or(Expr::Var(*v)),
            Expr::Sum(items) => Expr::sum(items.iter().map(|e| e.substitute(map)).collect()),
            Expr::Product(items) => Expr::product(items.iter().map(|e| e.substitute(map)).collect()),
            Expr::Quotient(a, b) => Expr::quotient(a.substitute(map), b.substitute(map)),
            Expr::Pow(b, k) => Expr::pow(b.substitute(map), *k),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(map)),
        }
    }

    pub fn remap_vars(&self, map: &impl Fn(usize) -> usize) -> Expr {
        self.substitute(&|v| Some(Expr::Var(map(v))))
    }

    pub fn display_with<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

impl From<&Polynomial> for Expr {
    fn from(p: &Polynomial) -> Expr {
        let terms = p
            .terms()
            .map(|(m, c)| {
                let mut factors = vec![Expr::Const(c)];
                factors.extend(mono_factors(m));
                Expr::product(factors)
            })
            .collect();
        Expr::sum(terms)
    }
}

impl From<Polynomial> for Expr {
    fn from(p: Polynomial) -> Expr {
        Expr::from(&p)
    }
}

fn mono_factors(m: &Monomial) -> Vec<Expr> {
    m.pairs()
        .iter()
        .map(|&(v, e)| Expr::pow(Expr::Var(v), e as i32))
        .collect()
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

fn fmt_const(c: f64) -> String {
    if c.is_finite() && c == c.trunc() && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        // 17 significant digits round-trip exactly
        format!("{c:.16e}")
    }
}

impl ExprDisplay<'_> {
    // precedence: 0 sum, 1 product, 2 power/atom
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        match e {
            Expr::Const(c) => {
                if *c < 0.0 || fmt_const(*c).contains('e') {
                    write!(f, "({})", fmt_const(*c))
                } else {
                    write!(f, "{}", fmt_const(*c))
                }
            }
            Expr::Var(v) => match self.names.get(*v) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "_v{v}"),
            },
            Expr::Sum(items) => {
                if prec > 0 {
                    write!(f, "(")?;
                }
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    self.write(it, f, 1)?;
                }
                if prec > 0 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expr::Product(items) => {
                if prec > 1 {
                    write!(f, "(")?;
                }
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    self.write(it, f, 2)?;
                }
                if prec > 1 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expr::Quotient(a, b) => {
                if prec > 1 {
                    write!(f, "(")?;
                }
                self.write(a, f, 2)?;
                write!(f, "/")?;
                self.write(b, f, 3)?;
                if prec > 1 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expr::Pow(b, k) => {
                if matches!(**b, Expr::Pow(..)) {
                    write!(f, "(")?;
                    self.write(b, f, 3)?;
                    write!(f, ")")?;
                } else {
                    self.write(b, f, 3)?;
                }
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f, 0)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_folding() {
        let e = Expr::sum(vec![Expr::Const(1.0), Expr::Const(2.0), Expr::Var(0)]);
        assert_eq!(e, Expr::Sum(vec![Expr::Var(0), Expr::Const(3.0)]));
        assert_eq!(Expr::product(vec![Expr::Const(0.0), Expr::Var(0)]), Expr::zero());
        assert_eq!(Expr::call(Func::Log, Expr::Const(1.0)), Expr::zero());
    }

    #[test]
    fn polynomial_classification() {
        let x = Expr::Var(0);
        let rational = Expr::quotient(x.clone(), Expr::sum(vec![x.clone(), Expr::one()]));
        assert!(!rational.is_polynomial());
        assert!(rational.is_rational());
        let div_const = Expr::quotient(x.clone(), Expr::Const(4.0));
        assert_eq!(div_const.to_polynomial().unwrap(), Polynomial::var(0).scale(0.25));
        assert!(!Expr::call(Func::Exp, x).is_rational());
    }

    #[test]
    fn chain_rule() {
        // d/dx exp(sin(x)) = exp(sin x) cos x
        let x = Expr::Var(0);
        let e = Expr::call(Func::Exp, Expr::call(Func::Sin, x));
        let d = e.diff(0);
        for &p in &[0.1f64, 0.7, -1.3] {
            let want = p.sin().exp() * p.cos();
            assert!((d.eval(&[p]) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn quotient_derivative() {
        let x = Expr::Var(0);
        let e = Expr::quotient(Expr::one(), Expr::sum(vec![Expr::one(), Expr::pow(x, 2)]));
        let d = e.diff(0);
        for &p in &[0.0f64, 0.5, 2.0] {
            let want = -2.0 * p / (1.0 + p * p).powi(2);
            assert!((d.eval(&[p]) - want).abs() < 1e-14);
        }
    }
}
