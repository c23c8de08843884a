//! SDPA sparse (`.dat-s`) files.
//!
//! SDPA reads `min Σ cᵢxᵢ  s.t.  Σ Fᵢxᵢ − F₀ ⪰ 0`, so the constant of a
//! block is written negated.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{eliminate_equalities, BlockKind, ConeBlock, ConicStandardForm, EliminationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqualityMode {
    /// Each equality becomes two opposite diagonal inequalities.
    Paired,
    /// Equalities are substituted out through a nullspace basis.
    Eliminated,
}

impl EqualityMode {
    fn name(self) -> &'static str {
        match self {
            Self::Paired => "paired",
            Self::Eliminated => "eliminated",
        }
    }
}

#[derive(Debug, Error)]
pub enum SdpaError {
    #[error("unexpected end of file while reading {0}")]
    Truncated(&'static str),
    #[error("bad token `{token}` while reading {what}")]
    BadToken { token: String, what: &'static str },
    #[error("entry {0} is out of range")]
    OutOfRange(String),
    #[error(transparent)]
    Elimination(#[from] EliminationError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const OFFSET_TAG: &str = "objective offset";

/// Text of the file. `header` lines are emitted as comments.
pub fn write_sdpa(std: &ConicStandardForm, mode: EqualityMode, header: &[String]) -> Result<String, SdpaError> {
    let form = match mode {
        EqualityMode::Eliminated => eliminate_equalities(std)?.reduced,
        EqualityMode::Paired => with_paired_rows(std),
    };
    let mut s = String::new();
    for h in header {
        for line in h.lines() {
            writeln!(s, "* {line}").unwrap();
        }
    }
    writeln!(s, "* equalities: {}", mode.name()).unwrap();
    writeln!(s, "* {OFFSET_TAG} {:.16e}", form.offset).unwrap();
    writeln!(s, "{}", form.num_vars).unwrap();
    writeln!(s, "{}", form.blocks.len()).unwrap();
    let sizes: Vec<String> = form
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::Psd => b.dim.to_string(),
            BlockKind::Diag => format!("-{}", b.dim),
        })
        .collect();
    writeln!(s, "{}", sizes.join(" ")).unwrap();
    let c: Vec<String> = form.c.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(s, "{}", c.join(" ")).unwrap();
    for (k, b) in form.blocks.iter().enumerate() {
        let mut b = b.clone();
        b.canonicalize();
        for &(mat, i, j, v) in &b.entries {
            let v = if mat == 0 { -v } else { v };
            writeln!(s, "{mat} {} {} {} {v:.16e}", k + 1, i + 1, j + 1).unwrap();
        }
    }
    Ok(s)
}

pub fn export_sdpa(
    std: &ConicStandardForm,
    path: &Path,
    mode: EqualityMode,
    header: &[String],
) -> Result<(), SdpaError> {
    let text = write_sdpa(std, mode, header)?;
    std::fs::write(path, text).map_err(|source| SdpaError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn with_paired_rows(std: &ConicStandardForm) -> ConicStandardForm {
    let mut form = std.clone();
    let m = std.a_eq.nrows();
    form.a_eq = DMatrix::zeros(0, std.num_vars);
    form.b_eq = DVector::zeros(0);
    if m > 0 {
        let mut d = ConeBlock::new(BlockKind::Diag, 2 * m);
        for r in 0..m {
            d.push(0, 2 * r, 2 * r, -std.b_eq[r]);
            d.push(0, 2 * r + 1, 2 * r + 1, std.b_eq[r]);
            for k in 0..std.num_vars {
                let a = std.a_eq[(r, k)];
                d.push(k + 1, 2 * r, 2 * r, a);
                d.push(k + 1, 2 * r + 1, 2 * r + 1, -a);
            }
        }
        form.blocks.push(d);
    }
    form
}

/// Reads a file in the same dialect, turning opposite diagonal pairs back
/// into equalities.
pub fn parse_sdpa(text: &str) -> Result<ConicStandardForm, SdpaError> {
    let mut offset = 0.0;
    let mut body = String::new();
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix('*').or_else(|| t.strip_prefix('"')) {
            if let Some(v) = rest.trim().strip_prefix(OFFSET_TAG) {
                offset = parse_f64(v.trim(), "objective offset")?;
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    let mut toks = body
        .split(|c: char| c.is_whitespace() || "{}(),".contains(c))
        .filter(|t| !t.is_empty());
    let mut next = |what: &'static str| toks.next().ok_or(SdpaError::Truncated(what));
    let m = parse_usize(next("constraint count")?, "constraint count")?;
    let nblocks = parse_usize(next("block count")?, "block count")?;
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let t = next("block sizes")?;
        let v: i64 = t.parse().map_err(|_| bad(t, "block sizes"))?;
        let kind = if v < 0 { BlockKind::Diag } else { BlockKind::Psd };
        blocks.push(ConeBlock::new(kind, v.unsigned_abs() as usize));
    }
    let mut c = Vec::with_capacity(m);
    for _ in 0..m {
        c.push(parse_f64(next("objective")?, "objective")?);
    }
    loop {
        let Ok(first) = next("entry") else { break };
        let mat = parse_usize(first, "entry")?;
        let blk = parse_usize(next("entry")?, "entry")?;
        let i = parse_usize(next("entry")?, "entry")?;
        let j = parse_usize(next("entry")?, "entry")?;
        let v = parse_f64(next("entry")?, "entry")?;
        let desc = || format!("{mat} {blk} {i} {j}");
        if mat > m || blk == 0 || blk > nblocks {
            return Err(SdpaError::OutOfRange(desc()));
        }
        let b = &mut blocks[blk - 1];
        if i == 0 || j == 0 || i > b.dim || j > b.dim || (b.kind == BlockKind::Diag && i != j) {
            return Err(SdpaError::OutOfRange(desc()));
        }
        b.push(mat, i - 1, j - 1, if mat == 0 { -v } else { v });
    }
    let mut form = ConicStandardForm::new(m);
    form.c = c;
    form.offset = offset;
    form.blocks = blocks;
    recover_equalities(&mut form);
    Ok(form)
}

fn bad(t: &str, what: &'static str) -> SdpaError {
    SdpaError::BadToken {
        token: t.to_string(),
        what,
    }
}

fn parse_usize(t: &str, what: &'static str) -> Result<usize, SdpaError> {
    t.parse().map_err(|_| bad(t, what))
}

fn parse_f64(t: &str, what: &'static str) -> Result<f64, SdpaError> {
    t.parse().map_err(|_| bad(t, what))
}

/// Moves diagonal pairs `g(x) ≥ 0`, `−g(x) ≥ 0` (adjacent rows) into
/// `A_eq x = b_eq` and drops blocks left empty.
fn recover_equalities(form: &mut ConicStandardForm) {
    let n = form.num_vars;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for b in form.blocks.iter_mut().filter(|b| b.kind == BlockKind::Diag) {
        let mut dense = vec![vec![0.0; n + 1]; b.dim];
        for &(mat, i, _, v) in &b.entries {
            dense[i][mat] += v;
        }
        let mut keep = vec![true; b.dim];
        let mut i = 0;
        while i + 1 < b.dim {
            let nonzero = dense[i].iter().skip(1).any(|&v| v != 0.0);
            if nonzero && dense[i].iter().zip(&dense[i + 1]).all(|(a, c)| *a == -*c) {
                rows.push((dense[i][1..].to_vec(), -dense[i][0]));
                keep[i] = false;
                keep[i + 1] = false;
                i += 2;
            } else {
                i += 1;
            }
        }
        if keep.iter().all(|&k| k) {
            continue;
        }
        let mut map = vec![usize::MAX; b.dim];
        let mut d = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = d;
                d += 1;
            }
        }
        let mut nb = ConeBlock::new(BlockKind::Diag, d);
        for &(mat, i, _, v) in &b.entries {
            if keep[i] {
                nb.push(mat, map[i], map[i], v);
            }
        }
        *b = nb;
    }
    form.blocks.retain(|b| b.dim > 0);
    if !rows.is_empty() {
        form.a_eq = DMatrix::from_fn(rows.len(), n, |r, k| rows[r].0[k]);
        form.b_eq = DVector::from_fn(rows.len(), |r, _| rows[r].1);
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_by_two;
    use super::super::{builtin_ipm, SolveOptions};
    use super::*;

    fn canonical(mut f: ConicStandardForm) -> ConicStandardForm {
        for b in &mut f.blocks {
            b.canonicalize();
        }
        f.scales = vec![1.0; f.num_vars];
        f
    }

    #[test]
    fn toy_file_matches_reference() {
        let text = write_sdpa(&two_by_two(), EqualityMode::Paired, &[]).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('*')).collect();
        assert_eq!(
            body,
            [
                "1",
                "1",
                "2",
                "1.0000000000000000e0",
                "0 1 1 1 -1.0000000000000000e0",
                "0 1 2 2 -1.0000000000000000e0",
                "1 1 1 2 1.0000000000000000e0",
            ]
        );
        let back = parse_sdpa(&text).unwrap();
        let r = builtin_ipm(&back, &SolveOptions::default());
        assert!((r.objective + 1.0).abs() < 1e-7);
    }

    #[test]
    fn paired_round_trip_is_exact() {
        let mut f = ConicStandardForm::new(3);
        f.c = vec![0.1, -1.0 / 3.0, 2.0f64.sqrt()];
        f.offset = std::f64::consts::PI;
        f.a_eq = DMatrix::from_row_slice(2, 3, &[1.0, 1e-17, 0.3, 0.0, -2.5, 1.0 / 7.0]);
        f.b_eq = DVector::from_column_slice(&[1.0, -0.7]);
        let mut b = ConeBlock::new(BlockKind::Psd, 2);
        b.push(0, 0, 0, 1.0 / 3.0);
        b.push(2, 0, 1, -std::f64::consts::E);
        b.push(3, 1, 1, 123456.789);
        f.blocks.push(b);
        let mut d = ConeBlock::new(BlockKind::Diag, 2);
        d.push(1, 0, 0, 1.0);
        d.push(0, 1, 1, 5e-300);
        f.blocks.push(d);
        let text = write_sdpa(&f, EqualityMode::Paired, &["test".into()]).unwrap();
        assert!(text.starts_with("* test\n* equalities: paired\n"));
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(canonical(back), canonical(f));
    }

    #[test]
    fn empty_problem() {
        let f = ConicStandardForm::new(0);
        let text = write_sdpa(&f, EqualityMode::Paired, &[]).unwrap();
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(back.num_vars, 0);
        assert!(back.blocks.is_empty());
    }

    #[test]
    fn eliminated_mode_keeps_the_optimum() {
        // min m4 over the moment matrix of 1, x, x² with m0 = 1, m1 = 0, m2 = 1
        let mut f = ConicStandardForm::new(5);
        f.c[4] = 1.0;
        let mut b = ConeBlock::new(BlockKind::Psd, 3);
        for i in 0..3 {
            for j in i..3 {
                b.push(i + j + 1, i, j, 1.0);
            }
        }
        f.blocks.push(b);
        f.a_eq = DMatrix::from_row_slice(3, 5, &[1., 0., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 1., 0., 0.]);
        f.b_eq = DVector::from_column_slice(&[1.0, 0.0, 1.0]);
        let text = write_sdpa(&f, EqualityMode::Eliminated, &[]).unwrap();
        let back = parse_sdpa(&text).unwrap();
        assert_eq!(back.num_vars, 2);
        let r = builtin_ipm(&back, &SolveOptions::default());
        assert!((r.objective - 1.0).abs() < 1e-6, "{}", r.objective);
        let p = parse_sdpa(&write_sdpa(&f, EqualityMode::Paired, &[]).unwrap()).unwrap();
        assert_eq!(p.a_eq.nrows(), 3);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(parse_sdpa("1\n1\n2\n"), Err(SdpaError::Truncated(_))));
        assert!(matches!(parse_sdpa("1\n1\n2\n1.0\n2 1 1 1 1.0\n"), Err(SdpaError::OutOfRange(_))));
        assert!(matches!(parse_sdpa("x"), Err(SdpaError::BadToken { .. })));
        assert!(matches!(parse_sdpa("1 1 -2 1.0 1 1 1 2 1.0"), Err(SdpaError::OutOfRange(_))));
    }

    #[test]
    fn sdpa_punctuation_is_accepted() {
        let text = "\"comment\n1 =mdim\n1\n{2}\n{1.0}\n0 1 1 1 -1.0\n0 1 2 2 -1.0\n1 1 1 2 1.0\n";
        // the `=mdim` annotation is not part of our dialect
        assert!(parse_sdpa(text).is_err());
        let text = "\"comment\n1\n1\n{2}\n{1.0}\n0,1,1,1,-1.0\n0 1 2 2 -1.0\n1 1 1 2 1.0\n";
        let f = parse_sdpa(text).unwrap();
        assert_eq!(canonical(f), canonical(two_by_two()));
    }
}
