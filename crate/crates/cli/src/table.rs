use std::fmt::Write;
use std::path::Path;

use crate::Failure;

/// A table rendered either as aligned text or as CSV.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn text(&self) -> String {
        let mut w: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (k, c) in r.iter().enumerate() {
                w[k] = w[k].max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: Vec<&str>| {
            let parts: Vec<String> = cells.iter().enumerate().map(|(k, c)| format!("{c:<width$}", width = w[k])).collect();
            writeln!(s, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&mut s, self.header.clone());
        for r in &self.rows {
            line(&mut s, r.iter().map(String::as_str).collect());
        }
        s
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Fixed-point rendering that keeps small bounds readable.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e7) {
        format!("{v:.8e}")
    } else {
        format!("{v:.8}")
    }
}
