//! CSV reading and writing.
//!
//! All numbers are printed with 17 significant digits so that re-running a
//! command reproduces byte-identical files and values round-trip through
//! `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::network::{AdjacencyMatrix, NetworkSvd, TypeDistribution};
use crate::path::{DefaultEvent, GridCurves};
use crate::stats::Histogram;
use crate::Result;

/// 17 significant digits; round-trips any finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a dense matrix: one row per line, comma-separated entries.
pub fn parse_dense_matrix(text: &str) -> Result<AdjacencyMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!(
            "matrix must be square: {n} rows but a row has a different length"
        )));
    }
    AdjacencyMatrix::new(n, rows.into_iter().flatten().collect())
}

/// Reads a sparse triple list: lines `i, j, weight` with 0-based indices;
/// missing entries are 0. The dimension is `max index + 1`.
pub fn parse_triples(text: &str) -> Result<AdjacencyMatrix> {
    let mut triples: Vec<(usize, usize, f64)> = Vec::new();
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "line {}: expected `i, j, weight`",
                lineno + 1
            )));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let w: f64 = parts[2]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        n = n.max(i + 1).max(j + 1);
        triples.push((i, j, w));
    }
    if n == 0 {
        return Err(Error::Parse("empty triple list".into()));
    }
    let mut data = vec![0.0; n * n];
    for (i, j, w) in triples {
        data[i * n + j] = w;
    }
    AdjacencyMatrix::new(n, data)
}

/// Loads a matrix file, deciding the format from the first data line
/// (3 columns with integer leading pair = triples, otherwise dense).
pub fn read_matrix(path: &Path) -> Result<AdjacencyMatrix> {
    let text = fs::read_to_string(path)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    let looks_sparse = first.is_some_and(|l| {
        let parts: Vec<&str> = l.split(',').map(str::trim).collect();
        parts.len() == 3
            && parts[0].parse::<usize>().is_ok()
            && parts[1].parse::<usize>().is_ok()
    });
    if looks_sparse {
        parse_triples(&text)
    } else {
        parse_dense_matrix(&text)
    }
}

pub fn matrix_to_dense_csv(a: &AdjacencyMatrix) -> String {
    let n = a.dim();
    let mut out = String::new();
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(a.entry(i, j)));
        }
        out.push('\n');
    }
    out
}

pub fn curves_to_csv(c: &GridCurves) -> String {
    let mut out = String::from("t,D");
    for i in 0..c.d_by_type.len() {
        let _ = write!(out, ",D_type_{}", i + 1);
    }
    for j in 0..c.cluster_loss.len() {
        let _ = write!(out, ",L_{}", j + 1);
    }
    for i in 0..c.q_by_type.len() {
        let _ = write!(out, ",Q_type_{}", i + 1);
    }
    out.push_str(",X\n");
    for k in 0..c.time.len() {
        out.push_str(&fmt_f64(c.time[k]));
        let _ = write!(out, ",{}", fmt_f64(c.d[k]));
        for series in &c.d_by_type {
            let _ = write!(out, ",{}", fmt_f64(series[k]));
        }
        for series in &c.cluster_loss {
            let _ = write!(out, ",{}", fmt_f64(series[k]));
        }
        for series in &c.q_by_type {
            let _ = write!(out, ",{}", fmt_f64(series[k]));
        }
        let _ = write!(out, ",{}\n", fmt_f64(c.x[k]));
    }
    out
}

pub fn defaults_to_csv(events: &[DefaultEvent]) -> String {
    let mut out = String::from("name,type,time\n");
    for e in events {
        let _ = writeln!(out, "{},{},{}", e.name, e.type_idx, fmt_f64(e.time));
    }
    out
}

pub fn histogram_to_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(h.edges[i]),
            fmt_f64(h.edges[i + 1]),
            c
        );
    }
    out
}

pub fn singular_values_to_csv(svd: &NetworkSvd) -> String {
    let mut out = String::from("j,xi_sq\n");
    for (j, s) in svd.singular_values().iter().enumerate() {
        let _ = writeln!(out, "{},{}", j + 1, fmt_f64(*s));
    }
    out
}

/// One factor file: row per name, column per cluster.
pub fn factors_to_csv(svd: &NetworkSvd, left: bool) -> String {
    let mut out = String::new();
    for j in 0..svd.rank() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}_{}", if left { "ell" } else { "u" }, j + 1);
    }
    out.push('\n');
    for name in 0..svd.dim() {
        for j in 0..svd.rank() {
            if j > 0 {
                out.push(',');
            }
            let col = if left {
                svd.left_column(j)
            } else {
                svd.right_column(j)
            };
            out.push_str(&fmt_f64(col[name]));
        }
        out.push('\n');
    }
    out
}

pub fn type_distribution_to_csv(dist: &TypeDistribution) -> String {
    let rank = dist.atoms.first().map_or(0, |a| a.beta_c.len());
    let mut out = String::new();
    for j in 0..rank {
        let _ = write!(out, "beta_c_{},", j + 1);
    }
    for j in 0..rank {
        let _ = write!(out, "ell_{},", j + 1);
    }
    out.push_str("probability,count\n");
    for a in &dist.atoms {
        for v in a.beta_c.iter().chain(&a.ell) {
            let _ = write!(out, "{},", fmt_f64(*v));
        }
        let _ = writeln!(out, "{},{}", fmt_f64(a.probability), a.count);
    }
    out
}
