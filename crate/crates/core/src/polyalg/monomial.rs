use std::cmp::Ordering;
use std::fmt;

/// Sparse monomial: sorted `(variable id, exponent)` pairs with no zero
/// exponents.
///
/// Ordering is graded-lexicographic: lower total degree first, then within a
/// degree the monomial with the larger exponent on the lowest variable id
/// comes first (`1, x, y, x², xy, y², …`).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    exps: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Self { exps: Vec::new() }
    }

    pub fn var(id: usize) -> Self {
        Self::var_pow(id, 1)
    }

    pub fn var_pow(id: usize, exp: u32) -> Self {
        if exp == 0 {
            Self::one()
        } else {
            Self {
                exps: vec![(id, exp)],
            }
        }
    }

    /// Builds a monomial from arbitrary pairs; duplicate ids are summed and
    /// zero exponents dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut exps: Vec<(usize, u32)> = pairs.into_iter().filter(|&(_, e)| e > 0).collect();
        exps.sort_unstable_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(exps.len());
        for (v, e) in exps {
            match merged.last_mut() {
                Some((lv, le)) if *lv == v => *le += e,
                _ => merged.push((v, e)),
            }
        }
        Self { exps: merged }
    }

    /// Dense exponent vector → monomial.
    pub fn from_dense(exps: &[u32]) -> Self {
        Self::from_pairs(exps.iter().copied().enumerate())
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.exps
    }

    pub fn is_one(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent(&self, var: usize) -> u32 {
        self.exps
            .binary_search_by_key(&var, |&(v, _)| v)
            .map(|i| self.exps[i].1)
            .unwrap_or(0)
    }

    pub fn contains(&self, var: usize) -> bool {
        self.exponent(var) > 0
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.exps.iter().map(|&(v, _)| v)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.exps.len() + other.exps.len());
        let (mut i, mut j) = (0, 0);
        while i < self.exps.len() && j < other.exps.len() {
            let (a, b) = (self.exps[i], other.exps[j]);
            match a.0.cmp(&b.0) {
                Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.exps[i..]);
        out.extend_from_slice(&other.exps[j..]);
        Monomial { exps: out }
    }

    pub fn pow(&self, k: u32) -> Monomial {
        if k == 0 {
            return Monomial::one();
        }
        Monomial {
            exps: self.exps.iter().map(|&(v, e)| (v, e * k)).collect(),
        }
    }

    /// Removes `var` from the monomial, returning its exponent and the rest.
    pub fn split_off(&self, var: usize) -> (u32, Monomial) {
        let e = self.exponent(var);
        let rest = Monomial {
            exps: self.exps.iter().copied().filter(|&(v, _)| v != var).collect(),
        };
        (e, rest)
    }

    /// Replaces the exponent of `var` (0 removes it).
    pub fn with_exponent(&self, var: usize, exp: u32) -> Monomial {
        let (_, rest) = self.split_off(var);
        rest.mul(&Monomial::var_pow(var, exp))
    }

    /// Returns `self / var` with the removed exponent, or `None` when `var`
    /// does not divide the monomial.
    pub fn divide_var(&self, var: usize) -> Option<(u32, Monomial)> {
        let e = self.exponent(var);
        (e > 0).then(|| (e, self.with_exponent(var, e - 1)))
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.exps
            .iter()
            .map(|&(v, e)| point[v].powi(e as i32))
            .product()
    }

    /// Relabels variable ids; the map must be injective on this monomial.
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> Monomial {
        Monomial::from_pairs(self.exps.iter().map(|&(v, e)| (map(v), e)))
    }

    pub fn display_with<'a>(&'a self, names: &'a [String]) -> MonomialDisplay<'a> {
        MonomialDisplay { mono: self, names }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // Walk both sparse lists; the first variable where the exponents
        // differ decides, larger exponent first.
        let (mut i, mut j) = (0, 0);
        loop {
            let a = self.exps.get(i);
            let b = other.exps.get(j);
            match (a, b) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va < vb {
                        return Ordering::Less;
                    }
                    if vb < va {
                        return Ordering::Greater;
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exps.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .exps
            .iter()
            .map(|&(v, e)| if e == 1 { format!("x{v}") } else { format!("x{v}^{e}") })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

pub struct MonomialDisplay<'a> {
    mono: &'a Monomial,
    names: &'a [String],
}

impl fmt::Display for MonomialDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mono.is_one() {
            return write!(f, "1");
        }
        let mut first = true;
        for &(v, e) in self.mono.pairs() {
            if !first {
                write!(f, "*")?;
            }
            first = false;
            let name = self.names.get(v).map(String::as_str).unwrap_or("?");
            if e == 1 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{name}^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials in `vars` of total degree ≤ `degree`, graded-lex ordered.
pub fn monomials_up_to(vars: &[usize], degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut exps = vec![0u32; vars.len()];
        compositions(vars, d, 0, &mut exps, &mut out);
    }
    out.sort();
    out
}

fn compositions(vars: &[usize], remaining: u32, pos: usize, exps: &mut [u32], out: &mut Vec<Monomial>) {
    if pos + 1 >= vars.len() {
        if vars.is_empty() {
            if remaining == 0 {
                out.push(Monomial::one());
            }
            return;
        }
        exps[pos] = remaining;
        out.push(Monomial::from_pairs(vars.iter().copied().zip(exps.iter().copied())));
        exps[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        compositions(vars, remaining - e, pos + 1, exps, out);
    }
    exps[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn grlex_order_two_vars() {
        let ms = monomials_up_to(&[0, 1], 2);
        let expected = vec![
            Monomial::one(),
            Monomial::var(0),
            Monomial::var(1),
            Monomial::var_pow(0, 2),
            Monomial::from_pairs([(0, 1), (1, 1)]),
            Monomial::var_pow(1, 2),
        ];
        assert_eq!(ms, expected);
    }

    #[test]
    fn one_var_listing() {
        let ms = monomials_up_to(&[0], 2);
        assert_eq!(ms, vec![Monomial::one(), Monomial::var(0), Monomial::var_pow(0, 2)]);
        assert_eq!(monomials_up_to(&[0], 4).len(), 5);
    }

    #[test]
    fn counts_match_binomial() {
        for n in 1..=5usize {
            let vars: Vec<usize> = (0..n).collect();
            for d in 0..=8u32 {
                let got = monomials_up_to(&vars, d).len() as u64;
                assert_eq!(got, binom(n as u64 + d as u64, d as u64), "n={n} d={d}");
            }
        }
    }

    #[test]
    fn canonical_form_drops_zeros() {
        let m = Monomial::from_pairs([(2, 0), (1, 3), (1, 1)]);
        assert_eq!(m.pairs(), &[(1, 4)]);
        assert_eq!(Monomial::one().degree(), 0);
        assert_eq!(m.degree(), 4);
    }

    #[test]
    fn multiplication_adds_exponents() {
        let a = Monomial::from_pairs([(0, 1), (2, 2)]);
        let b = Monomial::from_pairs([(1, 1), (2, 1)]);
        assert_eq!(a.mul(&b), Monomial::from_pairs([(0, 1), (1, 1), (2, 3)]));
    }
}
