//! Line-oriented model files.
//!
//! ```text
//! # comment
//! [vars]
//! v
//! [params]
//! R = 5
//! [modes]
//! off, ss, ca
//! ss.drift.v = log(2)/R*v
//! ss.diffusion.v.1 = 0
//! [transitions]
//! drop.ss = ca | p*v/R | v = v/2
//! drop.off = off | 0 |
//! [constraints]
//! 0 <= v
//! [initial]
//! mode = off
//! v = 0
//! [hints]
//! scale.v = 4
//! ```
//!
//! Every transition needs one line per mode; reset assignments that are
//! left out keep the variable unchanged. Parameters may refer to earlier
//! parameters and are substituted numerically.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::polyalg::{is_identifier, parse_expr, Expr, Func, Scope};
use crate::shs::{Constraint, InitialState, ModeTransition, ShsModel, Transition};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("parameter `{0}` is not declared in [params]")]
    UnknownOverride(String),
    #[error("{0}")]
    Incomplete(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn syntax(line: usize, message: impl Into<String>) -> ModelFileError {
    ModelFileError::Syntax {
        line,
        message: message.into(),
    }
}

const SECTIONS: [&str; 7] = ["vars", "params", "modes", "transitions", "constraints", "initial", "hints"];

struct Line<'a> {
    no: usize,
    text: &'a str,
}

pub fn load_model(path: &Path, overrides: &BTreeMap<String, f64>) -> Result<ShsModel, ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model_with(&text, overrides)
}

pub fn parse_model(text: &str) -> Result<ShsModel, ModelFileError> {
    parse_model_with(text, &BTreeMap::new())
}

/// Parses a model, replacing the values of the named parameters.
pub fn parse_model_with(text: &str, overrides: &BTreeMap<String, f64>) -> Result<ShsModel, ModelFileError> {
    let sections = split_sections(text)?;
    let get = |s: &str| sections.get(s).map(Vec::as_slice).unwrap_or(&[]);

    let var_names = parse_vars(get("vars"))?;
    let params = parse_params(get("params"), &var_names, overrides)?;
    let mut b = Builder {
        var_names,
        params,
        modes: Vec::new(),
    };
    let (modes, drift, diffusion) = b.parse_modes(get("modes"))?;
    b.modes = modes.clone();
    let n = b.var_names.len();
    let mut model = ShsModel::new(&b.var_names, &modes, 0);
    model.params = b.params.clone();
    model.noise_dim = diffusion.keys().map(|&(_, _, k)| k + 1).max().unwrap_or(0);
    model.diffusion = vec![vec![vec![Expr::zero(); model.noise_dim]; n]; modes.len()];
    for ((m, v), e) in drift {
        model.drift[m][v] = e;
    }
    for ((m, v, k), e) in diffusion {
        model.diffusion[m][v][k] = e;
    }
    model.transitions = b.parse_transitions(get("transitions"))?;
    model.constraints = b.parse_constraints(get("constraints"))?;
    model.initial = b.parse_initial(get("initial"))?;
    model.scales = b.parse_hints(get("hints"))?;
    Ok(model)
}

fn split_sections(text: &str) -> Result<BTreeMap<&str, Vec<Line<'_>>>, ModelFileError> {
    let mut out: BTreeMap<&str, Vec<Line<'_>>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(no, "unterminated section header"))?
                .trim();
            let Some(&name) = SECTIONS.iter().find(|&&s| s == name) else {
                return Err(syntax(no, format!("unknown section [{name}]")));
            };
            if out.contains_key(name) {
                return Err(syntax(no, format!("section [{name}] appears twice")));
            }
            out.insert(name, Vec::new());
            current = Some(name);
            continue;
        }
        let Some(sec) = current else {
            return Err(syntax(no, "content before the first section header"));
        };
        out.get_mut(sec).unwrap().push(Line { no, text: t });
    }
    Ok(out)
}

fn check_name(no: usize, name: &str, what: &str) -> Result<(), ModelFileError> {
    if !is_identifier(name) {
        return Err(syntax(no, format!("`{name}` is not a valid {what} name")));
    }
    if Func::from_name(name).is_some() || name == "sqrt" {
        return Err(syntax(no, format!("`{name}` is reserved")));
    }
    Ok(())
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_vars(lines: &[Line<'_>]) -> Result<Vec<String>, ModelFileError> {
    let mut names: Vec<String> = Vec::new();
    for l in lines {
        for name in split_list(l.text) {
            check_name(l.no, name, "variable")?;
            if names.iter().any(|n| n == name) {
                return Err(syntax(l.no, format!("variable `{name}` declared twice")));
            }
            names.push(name.to_string());
        }
    }
    if names.is_empty() {
        return Err(ModelFileError::Incomplete("[vars] declares no variables".into()));
    }
    Ok(names)
}

fn split_key(l: &Line<'_>) -> Result<(String, String), ModelFileError> {
    let (k, v) = l
        .text
        .split_once('=')
        .ok_or_else(|| syntax(l.no, "expected `key = value`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn expr_at(no: usize, text: &str, scope: &Scope<'_>) -> Result<Expr, ModelFileError> {
    parse_expr(text, scope).map_err(|e| syntax(no, format!("column {}: {}", e.offset + 1, e.kind)))
}

fn parse_params(
    lines: &[Line<'_>],
    vars: &[String],
    overrides: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, ModelFileError> {
    let mut params = BTreeMap::new();
    for l in lines {
        let (name, value) = split_key(l)?;
        check_name(l.no, &name, "parameter")?;
        if vars.contains(&name) {
            return Err(syntax(l.no, format!("`{name}` is already a variable")));
        }
        if params.contains_key(&name) {
            return Err(syntax(l.no, format!("parameter `{name}` declared twice")));
        }
        let v = match overrides.get(&name) {
            Some(&v) => v,
            None => {
                let e = expr_at(l.no, &value, &Scope::new(&[], &params))?;
                e.as_const()
                    .ok_or_else(|| syntax(l.no, format!("parameter `{name}` is not a number")))?
            }
        };
        params.insert(name, v);
    }
    if let Some(bad) = overrides.keys().find(|k| !params.contains_key(*k)) {
        return Err(ModelFileError::UnknownOverride(bad.clone()));
    }
    Ok(params)
}

type DriftMap = BTreeMap<(usize, usize), Expr>;
type DiffusionMap = BTreeMap<(usize, usize, usize), Expr>;

struct Builder {
    var_names: Vec<String>,
    params: BTreeMap<String, f64>,
    modes: Vec<String>,
}

impl Builder {
    fn scope(&self) -> Scope<'_> {
        Scope::new(&self.var_names, &self.params)
    }

    fn constant(&self, no: usize, text: &str) -> Result<f64, ModelFileError> {
        let e = expr_at(no, text, &Scope::new(&[], &self.params))?;
        e.as_const().ok_or_else(|| syntax(no, format!("`{text}` is not a number")))
    }

    fn var(&self, no: usize, name: &str) -> Result<usize, ModelFileError> {
        self.var_names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| syntax(no, format!("unknown variable `{name}`")))
    }

    fn mode(&self, no: usize, modes: &[String], name: &str) -> Result<usize, ModelFileError> {
        modes
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| syntax(no, format!("unknown mode `{name}`")))
    }

    fn parse_modes(&self, lines: &[Line<'_>]) -> Result<(Vec<String>, DriftMap, DiffusionMap), ModelFileError> {
        let mut modes: Vec<String> = Vec::new();
        for l in lines.iter().filter(|l| !l.text.contains('=')) {
            for name in split_list(l.text) {
                check_name(l.no, name, "mode")?;
                if modes.iter().any(|m| m == name) {
                    return Err(syntax(l.no, format!("mode `{name}` declared twice")));
                }
                modes.push(name.to_string());
            }
        }
        if modes.is_empty() {
            return Err(ModelFileError::Incomplete("[modes] declares no modes".into()));
        }
        let mut drift = DriftMap::new();
        let mut diffusion = DiffusionMap::new();
        for l in lines.iter().filter(|l| l.text.contains('=')) {
            let (key, value) = split_key(l)?;
            let parts: Vec<&str> = key.split('.').map(str::trim).collect();
            let e = || expr_at(l.no, &value, &self.scope());
            match parts.as_slice() {
                [m, "drift", v] => {
                    let slot = (self.mode(l.no, &modes, m)?, self.var(l.no, v)?);
                    if drift.insert(slot, e()?).is_some() {
                        return Err(syntax(l.no, format!("`{key}` assigned twice")));
                    }
                }
                [m, "diffusion", v, k] => {
                    let k: usize = k
                        .parse()
                        .ok()
                        .filter(|&k| k >= 1)
                        .ok_or_else(|| syntax(l.no, format!("noise index `{k}` must be a positive integer")))?;
                    let slot = (self.mode(l.no, &modes, m)?, self.var(l.no, v)?, k - 1);
                    if diffusion.insert(slot, e()?).is_some() {
                        return Err(syntax(l.no, format!("`{key}` assigned twice")));
                    }
                }
                _ => {
                    return Err(syntax(
                        l.no,
                        format!("unknown key `{key}` (expected mode.drift.var or mode.diffusion.var.k)"),
                    ))
                }
            }
        }
        Ok((modes, drift, diffusion))
    }

    fn parse_transitions(&self, lines: &[Line<'_>]) -> Result<Vec<Transition>, ModelFileError> {
        let n = self.var_names.len();
        let nm = self.modes.len();
        let mut order: Vec<String> = Vec::new();
        let mut entries: BTreeMap<(String, usize), ModeTransition> = BTreeMap::new();
        for l in lines {
            let (key, value) = split_key(l)?;
            let (name, mode) = key
                .split_once('.')
                .ok_or_else(|| syntax(l.no, "expected `transition.mode = target | intensity | resets`"))?;
            let (name, mode) = (name.trim(), mode.trim());
            check_name(l.no, name, "transition")?;
            let m = self.mode(l.no, &self.modes, mode)?;
            let fields: Vec<&str> = value.split('|').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(syntax(l.no, "expected `target | intensity | resets`"));
            }
            let target = self.mode(l.no, &self.modes, fields[0])?;
            let intensity = expr_at(l.no, fields[1], &self.scope())?;
            let mut reset: Vec<Expr> = (0..n).map(Expr::Var).collect();
            let mut seen = vec![false; n];
            for a in split_list(fields[2]) {
                let (v, e) = a
                    .split_once('=')
                    .ok_or_else(|| syntax(l.no, format!("reset `{a}` must read `var = expr`")))?;
                let v = self.var(l.no, v.trim())?;
                if std::mem::replace(&mut seen[v], true) {
                    return Err(syntax(l.no, format!("`{}` reset twice", self.var_names[v])));
                }
                reset[v] = expr_at(l.no, e.trim(), &self.scope())?;
            }
            if !order.iter().any(|o| o == name) {
                order.push(name.to_string());
            }
            let data = ModeTransition {
                target,
                intensity,
                reset,
            };
            if entries.insert((name.to_string(), m), data).is_some() {
                return Err(syntax(l.no, format!("`{key}` defined twice")));
            }
        }
        let mut out = Vec::new();
        for name in order {
            let mut per_mode = Vec::with_capacity(nm);
            for (m, mode) in self.modes.iter().enumerate() {
                let mt = entries.remove(&(name.clone(), m)).ok_or_else(|| {
                    ModelFileError::Incomplete(format!("transition `{name}` has no entry for mode `{mode}`"))
                })?;
                per_mode.push(mt);
            }
            out.push(Transition { name, per_mode });
        }
        Ok(out)
    }

    fn parse_constraints(&self, lines: &[Line<'_>]) -> Result<Vec<Constraint>, ModelFileError> {
        let mut out = Vec::new();
        for l in lines {
            let (flip, sep) = if l.text.contains("<=") {
                (false, "<=")
            } else if l.text.contains(">=") {
                (true, ">=")
            } else {
                return Err(syntax(l.no, "constraint must use `<=` or `>=`"));
            };
            let mut parts: Vec<&str> = l.text.split(sep).map(str::trim).collect();
            if flip {
                parts.reverse();
            }
            let is_const = |s: &str| parse_expr(s, &Scope::new(&[], &self.params)).is_ok();
            let c = match parts.as_slice() {
                [lo, e, hi] => Constraint {
                    lower: Some(self.constant(l.no, lo)?),
                    expr: expr_at(l.no, e, &self.scope())?,
                    upper: Some(self.constant(l.no, hi)?),
                },
                [a, b] if is_const(a) && !is_const(b) => Constraint {
                    lower: Some(self.constant(l.no, a)?),
                    expr: expr_at(l.no, b, &self.scope())?,
                    upper: None,
                },
                [a, b] if is_const(b) => Constraint {
                    lower: None,
                    expr: expr_at(l.no, a, &self.scope())?,
                    upper: Some(self.constant(l.no, b)?),
                },
                _ => return Err(syntax(l.no, "constraint must read `lo <= expr`, `expr <= hi` or `lo <= expr <= hi`")),
            };
            if let (Some(lo), Some(hi)) = (c.lower, c.upper) {
                if lo > hi {
                    return Err(syntax(l.no, "empty constraint interval"));
                }
            }
            out.push(c);
        }
        Ok(out)
    }

    fn parse_initial(&self, lines: &[Line<'_>]) -> Result<Option<InitialState>, ModelFileError> {
        if lines.is_empty() {
            return Ok(None);
        }
        let mut mode = None;
        let mut state: Vec<Option<f64>> = vec![None; self.var_names.len()];
        for l in lines {
            let (key, value) = split_key(l)?;
            if key == "mode" {
                mode = Some(self.mode(l.no, &self.modes, &value)?);
            } else {
                let v = self.var(l.no, &key)?;
                state[v] = Some(self.constant(l.no, &value)?);
            }
        }
        let mode = mode.ok_or_else(|| ModelFileError::Incomplete("[initial] needs `mode = ...`".into()))?;
        let state = state
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    ModelFileError::Incomplete(format!("[initial] has no value for `{}`", self.var_names[i]))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Some(InitialState { mode, state }))
    }

    fn parse_hints(&self, lines: &[Line<'_>]) -> Result<Vec<f64>, ModelFileError> {
        let mut scales = vec![1.0; self.var_names.len()];
        for l in lines {
            let (key, value) = split_key(l)?;
            let Some(v) = key.strip_prefix("scale.") else {
                return Err(syntax(l.no, format!("unknown hint `{key}`")));
            };
            let s = self.constant(l.no, &value)?;
            if !(s.is_finite() && s > 0.0) {
                return Err(syntax(l.no, "scale must be positive"));
            }
            scales[self.var(l.no, v.trim())?] = s;
        }
        Ok(scales)
    }
}

/// Serialises a model back to the file format. Parameters are already
/// folded into the expressions, so the output has no [params] section.
pub fn write_model(model: &ShsModel) -> String {
    use std::fmt::Write;
    let names = model.vars.names();
    let mut s = String::new();
    writeln!(s, "[vars]\n{}", names.join(", ")).unwrap();
    writeln!(s, "\n[modes]\n{}", model.modes.join(", ")).unwrap();
    for (m, mode) in model.modes.iter().enumerate() {
        for (i, e) in model.drift[m].iter().enumerate() {
            if !e.is_zero() {
                writeln!(s, "{mode}.drift.{} = {}", names[i], e.display_with(names)).unwrap();
            }
        }
        for (i, row) in model.diffusion[m].iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                if !e.is_zero() {
                    writeln!(s, "{mode}.diffusion.{}.{} = {}", names[i], k + 1, e.display_with(names)).unwrap();
                }
            }
        }
    }
    writeln!(s, "\n[transitions]").unwrap();
    for t in &model.transitions {
        for (m, mt) in t.per_mode.iter().enumerate() {
            let resets: Vec<String> = mt
                .reset
                .iter()
                .enumerate()
                .filter(|(i, e)| **e != Expr::Var(*i))
                .map(|(i, e)| format!("{} = {}", names[i], e.display_with(names)))
                .collect();
            writeln!(
                s,
                "{}.{} = {} | {} | {}",
                t.name,
                model.modes[m],
                model.modes[mt.target],
                mt.intensity.display_with(names),
                resets.join(", ")
            )
            .unwrap();
        }
    }
    if !model.constraints.is_empty() {
        writeln!(s, "\n[constraints]").unwrap();
        for c in &model.constraints {
            let e = c.expr.display_with(names);
            match (c.lower, c.upper) {
                (Some(lo), Some(hi)) => writeln!(s, "{lo:e} <= {e} <= {hi:e}"),
                (Some(lo), None) => writeln!(s, "{lo:e} <= {e}"),
                (None, Some(hi)) => writeln!(s, "{e} <= {hi:e}"),
                (None, None) => Ok(()),
            }
            .unwrap();
        }
    }
    if let Some(init) = &model.initial {
        writeln!(s, "\n[initial]\nmode = {}", model.modes[init.mode]).unwrap();
        for (i, x) in init.state.iter().enumerate() {
            writeln!(s, "{} = {x:e}", names[i]).unwrap();
        }
    }
    if model.scales.iter().any(|&x| x != 1.0) {
        writeln!(s, "\n[hints]").unwrap();
        for (i, x) in model.scales.iter().enumerate() {
            writeln!(s, "scale.{} = {x:e}", names[i]).unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::polyalg::Polynomial;

    const MINI: &str = "
[vars]
x
[params]
a = 2
b = a*3   # derived
[modes]
on, off
on.drift.x = -a*x
on.diffusion.x.2 = 1
[transitions]
flip.on = off | b | x = 0
flip.off = on | 1 |
";

    #[test]
    fn parses_minimal_model() {
        let m = parse_model(MINI).unwrap();
        assert_eq!(m.modes, vec!["on", "off"]);
        assert_eq!(m.params["b"], 6.0);
        assert_eq!(m.noise_dim, 2);
        assert_eq!(m.drift[0][0].to_polynomial().unwrap(), Polynomial::var(0).scale(-2.0));
        assert!(m.diffusion[0][0][0].is_zero());
        let t = &m.transitions[0];
        assert_eq!(t.per_mode[0].target, 1);
        assert_eq!(t.per_mode[1].reset[0], Expr::Var(0));
    }

    #[test]
    fn overrides_replace_values_and_propagate() {
        let over = BTreeMap::from([("a".to_string(), 1.0)]);
        let m = parse_model_with(MINI, &over).unwrap();
        assert_eq!(m.params["b"], 3.0);
        let over = BTreeMap::from([("zzz".to_string(), 1.0)]);
        assert!(matches!(parse_model_with(MINI, &over), Err(ModelFileError::UnknownOverride(_))));
    }

    #[test]
    fn strict_mode_errors() {
        let bad_key = MINI.replace("on.drift.x", "on.drfit.x");
        assert!(parse_model(&bad_key).unwrap_err().to_string().contains("unknown key"));
        let bad_ident = MINI.replace("-a*x", "-a*y");
        let err = parse_model(&bad_ident).unwrap_err().to_string();
        assert!(err.contains("unknown identifier `y`"), "{err}");
        assert!(err.starts_with("line 9"), "{err}");
        let missing = MINI.replace("flip.off = on | 1 |", "");
        let err = parse_model(&missing).unwrap_err().to_string();
        assert!(err.contains("no entry for mode `off`"), "{err}");
        let section = format!("{MINI}\n[extra]\n");
        assert!(parse_model(&section).is_err());
        assert!(parse_model(&MINI.replace("x = 0", "x = sqrt(2)")).is_err());
    }

    #[test]
    fn constraint_forms() {
        let text = format!("{MINI}\n[constraints]\n0 <= x\nx <= b\n-1 <= x <= 1\nx >= a\n");
        let m = parse_model(&text).unwrap();
        let b: Vec<(Option<f64>, Option<f64>)> = m.constraints.iter().map(|c| (c.lower, c.upper)).collect();
        assert_eq!(b, vec![(Some(0.0), None), (None, Some(6.0)), (Some(-1.0), Some(1.0)), (Some(2.0), None)]);
    }

    #[test]
    fn bundled_models_round_trip_through_writer() {
        for (name, model) in models::all() {
            let text = write_model(&model);
            let back = parse_model(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
            assert_eq!(back.modes, model.modes);
            assert_eq!(back.noise_dim, model.noise_dim);
            assert_eq!(back.initial, model.initial);
            for m in 0..model.num_modes() {
                for i in 0..model.num_vars() {
                    let p = [0.7, 1.3, 0.2];
                    let pt = &p[..model.num_vars()];
                    assert!((back.drift[m][i].eval(pt) - model.drift[m][i].eval(pt)).abs() < 1e-14);
                }
            }
        }
    }
}
