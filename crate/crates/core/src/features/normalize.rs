use std::fmt::Write as _;
use std::path::Path;

use super::UtteranceFeatures;
use crate::linalg::{format_real, TextReader};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// Variances at or below this are treated as constant dimensions.
const CONSTANT_VARIANCE: f64 = 1e-12;

/// Per-dimension global mean and variance. A dimension is one `(f, c)` cell
/// of the frame, indexed `f * C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NormStats {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Dimensions left unscaled because their variance is zero.
    pub fn constant_dims(&self) -> Vec<usize> {
        (0..self.dims()).filter(|&d| self.variance[d] <= CONSTANT_VARIANCE).collect()
    }

    pub fn apply(&self, utt: &UtteranceFeatures) -> Result<UtteranceFeatures> {
        if utt.frame_dim() != self.dims() {
            return Err(Error::Dimension(format!(
                "statistics for {} dims applied to {}-dim frames",
                self.dims(),
                utt.frame_dim()
            )));
        }
        let scale: Vec<f64> =
            self.variance.iter().map(|&v| if v <= CONSTANT_VARIANCE { 1.0 } else { 1.0 / v.sqrt() }).collect();
        let data = utt
            .as_slice()
            .chunks(self.dims())
            .flat_map(|frame| frame.iter().enumerate().map(|(d, &x)| (x - self.mean[d]) * scale[d]).collect::<Vec<_>>())
            .collect();
        utt.with_data(utt.shape(), data)
    }

    /// One `dimension mean variance` line per dimension.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dimension mean variance\n");
        for d in 0..self.dims() {
            let _ = writeln!(s, "{d} {} {}", format_real(self.mean[d]), format_real(self.variance[d]));
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut r = TextReader::new(text, source);
        let (mut mean, mut variance) = (Vec::new(), Vec::new());
        while !r.at_end() {
            let line = r.next_line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0].parse::<usize>().ok() != Some(mean.len()) {
                return Err(r.error(format!("bad statistics line `{line}`")));
            }
            let parse = |t: &str| t.parse::<f64>().map_err(|_| Error::format(source, format!("bad number `{t}`")));
            mean.push(parse(parts[1])?);
            variance.push(parse(parts[2])?);
        }
        Ok(NormStats { mean, variance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Estimates statistics over every frame of `corpus`.
    pub fn estimate(corpus: &[UtteranceFeatures], exec: Exec) -> Result<Self> {
        let first = corpus.first().ok_or_else(|| Error::Degenerate("empty corpus".into()))?;
        let dims = first.frame_dim();
        if let Some(u) = corpus.iter().find(|u| u.frame_dim() != dims) {
            return Err(Error::Dimension(format!(
                "utterance {} has {}-dim frames, expected {dims}",
                u.utterance_id,
                u.frame_dim()
            )));
        }
        let count: usize = corpus.iter().map(UtteranceFeatures::num_frames).sum();
        if count == 0 {
            return Err(Error::Degenerate("corpus has no frames".into()));
        }
        let n = count as f64;

        let sums = par::map_indices(corpus.len(), exec, |i| {
            let u = &corpus[i];
            let mut s = vec![0.0; dims];
            for t in 0..u.num_frames() {
                for (a, b) in s.iter_mut().zip(u.frame(t)) {
                    *a += b;
                }
            }
            s
        });
        let mean: Vec<f64> = par::pairwise_sum_vecs(sums).unwrap().into_iter().map(|s| s / n).collect();

        let squares = par::map_indices(corpus.len(), exec, |i| {
            let u = &corpus[i];
            let mut s = vec![0.0; dims];
            for t in 0..u.num_frames() {
                for ((a, b), m) in s.iter_mut().zip(u.frame(t)).zip(&mean) {
                    *a += (b - m) * (b - m);
                }
            }
            s
        });
        let variance = par::pairwise_sum_vecs(squares).unwrap().into_iter().map(|s| s / n).collect();
        Ok(NormStats { mean, variance })
    }
}

/// Global mean and variance normalization. Zero-variance dimensions are
/// mean-subtracted but left unscaled and reported through
/// [`NormStats::constant_dims`].
pub fn normalize_corpus(corpus: &[UtteranceFeatures]) -> Result<(Vec<UtteranceFeatures>, NormStats)> {
    let stats = NormStats::estimate(corpus, Exec::default())?;
    for d in stats.constant_dims() {
        log::warn!("feature dimension {d} has zero variance; left unscaled");
    }
    let normalized = corpus.iter().map(|u| stats.apply(u)).collect::<Result<Vec<_>>>()?;
    Ok((normalized, stats))
}
