//! Dense matrix helpers shared by the adaptation code, plus the text format
//! used to persist matrices: a `rows cols` line followed by one line per row
//! of values printed with 17 significant digits.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Cofactor matrix row `i` of `m`, i.e. `det(m) * inv(m)^T` row `i`.
pub fn cofactor_row(m: &DMatrix<f64>, i: usize) -> Result<DVector<f64>> {
    let det = m.determinant();
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Singular("cofactor of a singular matrix".into()))?;
    Ok(DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| det * inv[(j, i)])))
}

/// `ln |det m|`, computed from the LU factors.
pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    (0..u.nrows()).map(|i| u[(i, i)].abs().ln()).sum()
}

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_real(m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn write_vector(out: &mut String, v: &[f64]) {
    let _ = writeln!(out, "{}", v.len());
    let row: Vec<String> = v.iter().map(|&x| format_real(x)).collect();
    let _ = writeln!(out, "{}", row.join(" "));
}

/// Line-oriented reader over the text formats.
pub struct TextReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    source: &'a str,
}

impl<'a> TextReader<'a> {
    pub fn new(text: &'a str, source: &'a str) -> Self {
        TextReader { lines: text.lines().enumerate().peekable(), source }
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.source, message)
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
                Some((_, l)) => return Ok(l.trim()),
                None => return Err(self.error("unexpected end of file")),
            }
        }
    }

    pub fn at_end(&mut self) -> bool {
        while let Some((_, l)) = self.lines.peek() {
            if l.trim().is_empty() || l.trim_start().starts_with('#') {
                self.lines.next();
            } else {
                return false;
            }
        }
        true
    }

    /// Reads a line of the form `key value...` and returns the values.
    pub fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => Err(self.error(format!("expected `{key}`, found {other:?}"))),
        }
    }

    pub fn reals(&mut self) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        line.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| self.error(format!("bad number `{t}`")))).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        line.split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| self.error(format!("bad count `{t}`"))))
            .collect()
    }

    pub fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let dims = self.usizes()?;
        if dims.len() != 2 {
            return Err(self.error("matrix header must be `rows cols`"));
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = self.reals()?;
            if row.len() != cols {
                return Err(self.error(format!("row has {} values, expected {cols}", row.len())));
            }
            data.extend(row);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn vector(&mut self) -> Result<Vec<f64>> {
        let n = self.usizes()?;
        if n.len() != 1 {
            return Err(self.error("vector header must be a length"));
        }
        let v = if n[0] == 0 { Vec::new() } else { self.reals()? };
        if v.len() != n[0] {
            return Err(self.error(format!("vector has {} values, expected {}", v.len(), n[0])));
        }
        Ok(v)
    }
}
