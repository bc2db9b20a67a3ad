//! Line-oriented problem and solution files.
//!
//! Problem file:
//!
//! ```text
//! snl v1 <n> <m> <r> <R> <sigma>
//! <i> <j> <d2>          one line per known pair, 1-based, i < j
//! anchors
//! <x_1> ... <x_r>       m lines, anchor n-m+1 first
//! ```
//!
//! Anchor-anchor pairs missing from the pair list are filled in from the
//! anchor coordinates. Solution file: `solution v1` then `<i> <x_1> ... <x_r>`
//! per positioned sensor. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{PartialEdm, Problem};
use crate::error::{Result, SnlError};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> SnlError {
    SnlError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} '{tok}'")))
}

pub fn write_problem(path: &Path, problem: &Problem) -> Result<()> {
    let pedm = &problem.pedm;
    let mut out = String::new();
    writeln!(
        out,
        "snl v1 {} {} {} {:.17e} {:.17e}",
        pedm.n(),
        pedm.m(),
        problem.r,
        problem.radio_range,
        problem.noise_factor
    )
    .unwrap();
    for (i, j, d2) in pedm.pairs() {
        writeln!(out, "{} {} {:.16e}", i + 1, j + 1, d2).unwrap();
    }
    out.push_str("anchors\n");
    for row in problem.anchors.row_iter() {
        let coords: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
        out.push_str(&coords.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("snl") || toks.next() != Some("v1") {
        return Err(parse_err(path, hline, "expected header 'snl v1 n m r R sigma'"));
    }
    let n: usize = field(path, hline, toks.next(), "n")?;
    let m: usize = field(path, hline, toks.next(), "m")?;
    let r: usize = field(path, hline, toks.next(), "r")?;
    let radio_range: f64 = field(path, hline, toks.next(), "R")?;
    let noise_factor: f64 = field(path, hline, toks.next(), "sigma")?;
    if m > n || r == 0 {
        return Err(parse_err(path, hline, "need m <= n and r >= 1"));
    }

    let mut pairs = Vec::new();
    let mut saw_anchors = false;
    for (ln, line) in lines.by_ref() {
        if line == "anchors" {
            saw_anchors = true;
            break;
        }
        let mut toks = line.split_whitespace();
        let i: usize = field(path, ln, toks.next(), "node index")?;
        let j: usize = field(path, ln, toks.next(), "node index")?;
        let d2: f64 = field(path, ln, toks.next(), "squared distance")?;
        if toks.next().is_some() {
            return Err(parse_err(path, ln, "trailing fields"));
        }
        if i == 0 || j == 0 || i > n || j > n || i >= j {
            return Err(parse_err(path, ln, format!("need 1 <= i < j <= {n}, got {i} {j}")));
        }
        if !d2.is_finite() || d2 < 0.0 {
            return Err(parse_err(path, ln, format!("invalid squared distance {d2}")));
        }
        pairs.push((i - 1, j - 1, d2));
    }
    if !saw_anchors && m > 0 {
        return Err(parse_err(path, text.lines().count(), "missing 'anchors' section"));
    }

    let mut anchors = DMatrix::zeros(m, r);
    let mut read = 0;
    for (ln, line) in lines {
        if read == m {
            return Err(parse_err(path, ln, "more anchor rows than m"));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != r {
            return Err(parse_err(path, ln, format!("expected {r} coordinates")));
        }
        for (k, tok) in vals.into_iter().enumerate() {
            anchors[(read, k)] = field(path, ln, Some(tok), "coordinate")?;
        }
        read += 1;
    }
    if read != m {
        return Err(parse_err(path, text.lines().count(), format!("expected {m} anchor rows, found {read}")));
    }

    let first = n - m;
    let mut known: std::collections::HashSet<(usize, usize)> =
        pairs.iter().map(|&(i, j, _)| (i, j)).collect();
    for a in 0..m {
        for b in a + 1..m {
            if known.insert((first + a, first + b)) {
                let d2 = (anchors.row(a) - anchors.row(b)).norm_squared();
                pairs.push((first + a, first + b, d2));
            }
        }
    }
    let pedm = PartialEdm::from_pairs(n, m, pairs)?;
    Ok(Problem {
        pedm,
        anchors,
        r,
        radio_range,
        noise_factor,
    })
}

/// Write positioned sensors as `i x_1 .. x_r` (1-based `i`).
pub fn write_solution(path: &Path, positions: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("solution v1\n");
    for (i, coords) in positions {
        write!(out, "{}", i + 1).unwrap();
        for x in coords {
            write!(out, " {x:.17e}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_solution(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, "solution v1")) => {}
        Some((ln, _)) => return Err(parse_err(path, ln, "expected header 'solution v1'")),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        let i: usize = field(path, ln, toks.next(), "node index")?;
        if i == 0 {
            return Err(parse_err(path, ln, "node indices are 1-based"));
        }
        let coords = toks
            .map(|t| field(path, ln, Some(t), "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        out.push((i - 1, coords));
    }
    Ok(out)
}
