//! Decimal-text serialization helpers shared by every on-disk format.
//!
//! All floating point numbers are written with 17 significant digits, which
//! round-trips 64-bit floats exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{KelpError, Result};

/// Format a float with 17 significant digits (bit-faithful round trip).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| KelpError::io(path, e))?;
    file.write_all(content.as_bytes())
        .map_err(|e| KelpError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KelpError::io(path, e))
}

pub(crate) fn push_scalar(out: &mut String, key: &str, value: f64) {
    let _ = writeln!(out, "{key} {}", fmt_f64(value));
}

pub(crate) fn push_vector(out: &mut String, key: &str, v: &Array1<f64>) {
    let _ = writeln!(out, "{key} {}", v.len());
    for x in v.iter() {
        let _ = writeln!(out, "{}", fmt_f64(*x));
    }
}

pub(crate) fn push_matrix(out: &mut String, key: &str, m: &Array2<f64>) {
    let _ = writeln!(out, "{key} {} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let mut line = String::new();
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(&fmt_f64(*x));
        }
        let _ = writeln!(out, "{line}");
    }
}

/// Line-oriented reader for the sectioned text documents (model, basis, truth
/// bundle). Tracks line numbers for error reporting.
pub(crate) struct DocReader<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> DocReader<'a> {
    pub fn new(path: &'a Path, content: &'a str) -> Self {
        DocReader {
            path,
            lines: content.lines().collect(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> KelpError {
        KelpError::parse(self.path, self.pos + 1, msg)
    }

    /// Next non-empty line, or None at end of document.
    fn next_line(&mut self) -> Option<&'a str> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos];
            self.pos += 1;
            if !line.trim().is_empty() {
                return Some(line.trim());
            }
        }
        None
    }

    /// Peek the key of the next section header without consuming it.
    pub fn peek_key(&mut self) -> Option<&'a str> {
        let saved = self.pos;
        let key = self.next_line().map(|l| l.split_whitespace().next().unwrap());
        self.pos = saved;
        key
    }

    /// Read a header line `key tok1 tok2 ...` and return the tokens after the key.
    pub fn header(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self
            .next_line()
            .ok_or_else(|| self.err(format!("expected `{key}`, found end of file")))?;
        let mut toks = line.split_whitespace();
        let found = toks.next().unwrap();
        if found != key {
            return Err(self.err(format!("expected `{key}`, found `{found}`")));
        }
        Ok(toks.collect())
    }

    pub fn scalar_f64(&mut self, key: &str) -> Result<f64> {
        let toks = self.header(key)?;
        if toks.len() != 1 {
            return Err(self.err(format!("`{key}` expects one value")));
        }
        self.parse_f64(toks[0])
    }

    pub fn scalar_usize(&mut self, key: &str) -> Result<usize> {
        let toks = self.header(key)?;
        if toks.len() != 1 {
            return Err(self.err(format!("`{key}` expects one value")));
        }
        self.parse_usize(toks[0])
    }

    pub fn vector(&mut self, key: &str) -> Result<Array1<f64>> {
        let toks = self.header(key)?;
        if toks.len() != 1 {
            return Err(self.err(format!("`{key}` expects a length")));
        }
        let len = self.parse_usize(toks[0])?;
        let mut out = Array1::zeros(len);
        for i in 0..len {
            let line = self
                .next_line()
                .ok_or_else(|| self.err(format!("`{key}`: unexpected end of file")))?;
            out[i] = self.parse_f64(line)?;
        }
        Ok(out)
    }

    pub fn matrix(&mut self, key: &str) -> Result<Array2<f64>> {
        let toks = self.header(key)?;
        if toks.len() != 2 {
            return Err(self.err(format!("`{key}` expects `rows cols`")));
        }
        let rows = self.parse_usize(toks[0])?;
        let cols = self.parse_usize(toks[1])?;
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            let line = self
                .next_line()
                .ok_or_else(|| self.err(format!("`{key}`: unexpected end of file")))?;
            let mut count = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= cols {
                    return Err(self.err(format!("`{key}`: row {i} has more than {cols} values")));
                }
                out[[i, j]] = self.parse_f64(tok)?;
                count += 1;
            }
            if count != cols {
                return Err(self.err(format!(
                    "`{key}`: row {i} has {count} values, expected {cols}"
                )));
            }
        }
        Ok(out)
    }

    pub fn parse_f64(&self, tok: &str) -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| self.err(format!("non-numeric token `{tok}`")))
    }

    pub fn parse_usize(&self, tok: &str) -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| self.err(format!("non-integer token `{tok}`")))
    }
}
