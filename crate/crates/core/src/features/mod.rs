//! Log-mel filterbank features with deltas, energy, normalization and context
//! splicing.

mod deltas;
mod filterbank;
mod io;
mod normalize;
mod splice;

pub use deltas::{append_energy, compute_deltas, frame_log_energy, remove_energy, DELTA_WINDOW};
pub use filterbank::{apply_warp, mel_filterbank, FilterBank, FilterbankConfig, LOG_FLOOR};
pub use io::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use normalize::{normalize_corpus, NormStats};
pub use splice::{splice_context, splice_frame};

use crate::{Error, Result};

/// Channel order within a frame.
pub const CHANNEL_STATIC: usize = 0;
pub const CHANNEL_DELTA: usize = 1;
pub const CHANNEL_DOUBLE_DELTA: usize = 2;

/// Row-major `T x F` matrix of per-frame values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    frames: usize,
    dims: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dims {
            return Err(Error::Dimension(format!("{} values for a {frames}x{dims} frame matrix", data.len())));
        }
        Ok(FrameMatrix { frames, dims, data })
    }

    pub fn zeros(frames: usize, dims: usize) -> Self {
        FrameMatrix { frames, dims, data: vec![0.0; frames * dims] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != dims {
                return Err(Error::Dimension(format!("row {t} has {} values, expected {dims}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(FrameMatrix { frames: rows.len(), dims, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Features for one utterance: `T` frames of `F` frequency rows and `C`
/// channels (`[static]` or `[static, delta, double-delta]`), stored
/// row-major in `(t, f, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub speaker_id: String,
    num_frames: usize,
    num_freq: usize,
    num_channels: usize,
    data: Vec<f64>,
    /// Trailing frequency rows that carry non-spectral values (energy).
    pub non_local_rows: usize,
    pub labels: Option<Vec<u32>>,
}

impl UtteranceFeatures {
    pub fn new(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        shape: (usize, usize, usize),
        data: Vec<f64>,
    ) -> Result<Self> {
        let (t, f, c) = shape;
        if data.len() != t * f * c {
            return Err(Error::Dimension(format!("{} values for shape {t}x{f}x{c}", data.len())));
        }
        if !matches!(c, 1 | 3) {
            return Err(Error::Dimension(format!("channel count must be 1 or 3, got {c}")));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {i}")));
        }
        Ok(UtteranceFeatures {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            num_frames: t,
            num_freq: f,
            num_channels: c,
            data,
            non_local_rows: 0,
            labels: None,
        })
    }

    /// Single-channel features from a `T x F` matrix.
    pub fn from_static(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        frames: FrameMatrix,
    ) -> Result<Self> {
        let shape = (frames.frames(), frames.dims(), 1);
        Self::new(utterance_id, speaker_id, shape, frames.into_vec())
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.num_frames {
            return Err(Error::Dimension(format!("{} labels for {} frames", labels.len(), self.num_frames)));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_frames, self.num_freq, self.num_channels)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_freq(&self) -> usize {
        self.num_freq
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    /// Values per frame (`F * C`).
    pub fn frame_dim(&self) -> usize {
        self.num_freq * self.num_channels
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, c: usize) -> f64 {
        self.data[(t * self.num_freq + f) * self.num_channels + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, c: usize, v: f64) {
        self.data[(t * self.num_freq + f) * self.num_channels + c] = v;
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let d = self.frame_dim();
        &self.data[t * d..(t + 1) * d]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let d = self.frame_dim();
        &mut self.data[t * d..(t + 1) * d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// One channel as a `T x F` matrix.
    pub fn channel(&self, c: usize) -> FrameMatrix {
        let mut m = FrameMatrix::zeros(self.num_frames, self.num_freq);
        for t in 0..self.num_frames {
            for f in 0..self.num_freq {
                m.row_mut(t)[f] = self.get(t, f, c);
            }
        }
        m
    }

    /// The static channel as a `T x F` matrix.
    pub fn statics(&self) -> FrameMatrix {
        self.channel(CHANNEL_STATIC)
    }

    /// Drops the delta channels, keeping statics.
    pub fn static_only(&self) -> UtteranceFeatures {
        let mut out =
            UtteranceFeatures::from_static(self.utterance_id.clone(), self.speaker_id.clone(), self.statics())
                .expect("static channel has a valid shape");
        out.non_local_rows = self.non_local_rows;
        out.labels = self.labels.clone();
        out
    }

    /// Replaces the data keeping ids and labels.
    pub fn with_data(&self, shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let mut out = UtteranceFeatures::new(self.utterance_id.clone(), self.speaker_id.clone(), shape, data)?;
        if shape.0 != self.num_frames {
            return Err(Error::Dimension("frame count changed".into()));
        }
        out.labels = self.labels.clone();
        out.non_local_rows = self.non_local_rows;
        Ok(out)
    }
}
