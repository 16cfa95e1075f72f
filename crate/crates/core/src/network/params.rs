//! Flat parameter vectors with a per-layer offset table.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::linalg::{format_real, TextReader};
use crate::rng::KeyedRng;
use crate::{Error, Result};

/// One contiguous parameter block: `weights` values followed by `biases`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub weights: usize,
    pub biases: usize,
    /// Inputs feeding one output unit, used for initialization scale.
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.weights + self.biases
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offset table. Blocks are laid out back to back with no gaps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, weights: usize, biases: usize, fan_in: usize) -> usize {
        let offset = self.total();
        self.blocks.push(ParamBlock { name: name.into(), offset, weights, biases, fan_in });
        self.blocks.len() - 1
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    /// Splits a flat vector into per-block slices.
    pub fn unflatten(&self, values: &[f64]) -> Result<Vec<Vec<f64>>> {
        if values.len() != self.total() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} values, layout expects {}",
                values.len(),
                self.total()
            )));
        }
        Ok(self.blocks.iter().map(|b| values[b.range()].to_vec()).collect())
    }

    pub fn flatten(&self, parts: &[Vec<f64>]) -> Result<Vec<f64>> {
        if parts.len() != self.blocks.len() {
            return Err(Error::Dimension(format!("{} blocks given, layout has {}", parts.len(), self.blocks.len())));
        }
        let mut out = Vec::with_capacity(self.total());
        for (b, p) in self.blocks.iter().zip(parts) {
            if p.len() != b.len() {
                return Err(Error::Dimension(format!("block {} has {} values, expected {}", b.name, p.len(), b.len())));
            }
            out.extend_from_slice(p);
        }
        Ok(out)
    }
}

/// Flat parameters of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: &ParamLayout) -> Self {
        ParameterVector { layout: layout.clone(), values: vec![0.0; layout.total()] }
    }

    /// He-style Gaussian initialization, `N(0, 2 / fan_in)` weights and zero
    /// biases, drawn from a keyed stream per block.
    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut p = Self::zeros(layout);
        for (i, b) in layout.blocks.iter().enumerate() {
            let mut rng = KeyedRng::from_parts(&[seed, 0x5eed_0000 + i as u64]);
            let scale = (2.0 / b.fan_in.max(1) as f64).sqrt();
            for w in &mut p.values[b.offset..b.offset + b.weights] {
                *w = scale * rng.normal();
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.layout.blocks[i].range()]
    }

    /// SHA-256 of the little-endian value bytes, hex encoded.
    pub fn checksum(&self) -> String {
        checksum(&self.values)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("acnn-params 1\n");
        let _ = writeln!(s, "blocks {}", self.layout.blocks.len());
        for b in &self.layout.blocks {
            let _ = writeln!(s, "{} {} {} {} {}", b.name, b.offset, b.weights, b.biases, b.fan_in);
        }
        let _ = writeln!(s, "checksum {}", self.checksum());
        let _ = writeln!(s, "values {}", self.values.len());
        for v in &self.values {
            s.push_str(&format_real(*v));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        let version = r.keyed("acnn-params")?;
        if version != ["1"] {
            return Err(r.error("unsupported parameter file version"));
        }
        let n = parse_one(&mut r, "blocks")?;
        let mut layout = ParamLayout::default();
        for _ in 0..n {
            let line = r.next_line()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(r.error(format!("bad block line `{line}`")));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| r.error(format!("bad count `{s}`")));
            let (offset, weights, biases, fan_in) = (num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?);
            if offset != layout.total() {
                return Err(r.error(format!("block {} starts at {offset}, expected {}", f[0], layout.total())));
            }
            layout.push(f[0], weights, biases, fan_in);
        }
        let sum = r.keyed("checksum")?;
        let expected = sum.first().copied().unwrap_or_default().to_string();
        let count = parse_one(&mut r, "values")?;
        if count != layout.total() {
            return Err(r.error(format!("{count} values for a layout of {}", layout.total())));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = r.next_line()?;
            values.push(line.parse::<f64>().map_err(|_| r.error(format!("bad number `{line}`")))?);
        }
        let p = ParameterVector { layout, values };
        if p.checksum() != expected {
            return Err(r.error("checksum mismatch"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

fn parse_one(r: &mut TextReader<'_>, key: &str) -> Result<usize> {
    let v = r.keyed(key)?;
    match v.as_slice() {
        [x] => x.parse().map_err(|_| r.error(format!("bad `{key}` count"))),
        _ => Err(r.error(format!("`{key}` takes one value"))),
    }
}

pub fn checksum(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
