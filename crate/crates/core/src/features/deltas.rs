use super::{FrameMatrix, UtteranceFeatures, CHANNEL_STATIC};
use crate::{Error, Result};

/// Regression half-window for delta features.
pub const DELTA_WINDOW: usize = 2;

fn regression_deltas(x: &FrameMatrix, window: usize) -> FrameMatrix {
    let t_max = x.frames() as isize - 1;
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = FrameMatrix::zeros(x.frames(), x.dims());
    for t in 0..x.frames() {
        let row = out.row_mut(t);
        for n in 1..=window {
            let ahead = x.row((t as isize + n as isize).min(t_max) as usize);
            let behind = x.row((t as isize - n as isize).max(0) as usize);
            for ((o, a), b) in row.iter_mut().zip(ahead).zip(behind) {
                *o += n as f64 * (a - b);
            }
        }
        for o in row.iter_mut() {
            *o /= denom;
        }
    }
    out
}

/// Stacks statics with regression deltas and deltas-of-deltas over
/// `±window` frames, replicating edge frames.
pub fn compute_deltas(statics: &FrameMatrix, window: usize) -> Result<[FrameMatrix; 3]> {
    if window < 1 {
        return Err(Error::config("delta_window", "must be at least 1"));
    }
    let d = regression_deltas(statics, window);
    let dd = regression_deltas(&d, window);
    Ok([statics.clone(), d, dd])
}

impl UtteranceFeatures {
    /// Builds 3-channel features (static, delta, double-delta) from statics.
    pub fn with_deltas(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        statics: &FrameMatrix,
        window: usize,
    ) -> Result<Self> {
        let [s, d, dd] = compute_deltas(statics, window)?;
        let (t, f) = (s.frames(), s.dims());
        let mut data = Vec::with_capacity(t * f * 3);
        for i in 0..t {
            for j in 0..f {
                data.push(s.row(i)[j]);
                data.push(d.row(i)[j]);
                data.push(dd.row(i)[j]);
            }
        }
        UtteranceFeatures::new(utterance_id, speaker_id, (t, f, 3), data)
    }

    /// Recomputes delta channels from the static channel, keeping
    /// `non_local_rows` and labels. Single-channel input gains two channels.
    pub fn recompute_deltas(&self, window: usize) -> Result<Self> {
        let mut out = UtteranceFeatures::with_deltas(
            self.utterance_id.clone(),
            self.speaker_id.clone(),
            &self.statics(),
            window,
        )?;
        out.non_local_rows = self.non_local_rows;
        out.labels = self.labels.clone();
        Ok(out)
    }
}

/// Log of the total power in each spectrum frame.
pub fn frame_log_energy(power_spectrum: &FrameMatrix) -> Vec<f64> {
    (0..power_spectrum.frames()).map(|t| (power_spectrum.row(t).iter().sum::<f64>() + super::LOG_FLOOR).ln()).collect()
}

/// Appends per-frame energy as an extra trailing frequency row. For
/// 3-channel features the appended row carries the energy's own deltas.
/// The row is counted in `non_local_rows`.
pub fn append_energy(features: &UtteranceFeatures, energy: &[f64]) -> Result<UtteranceFeatures> {
    let (t, f, c) = features.shape();
    if energy.len() != t {
        return Err(Error::Dimension(format!("{} energies for {t} frames", energy.len())));
    }
    let energy_channels: Vec<Vec<f64>> = if c == 1 || t == 0 {
        vec![energy.to_vec()]
    } else {
        let m = FrameMatrix::new(t, 1, energy.to_vec())?;
        compute_deltas(&m, DELTA_WINDOW)?.iter().map(|x| x.as_slice().to_vec()).collect()
    };
    let mut data = Vec::with_capacity(t * (f + 1) * c);
    for i in 0..t {
        data.extend_from_slice(features.frame(i));
        for ch in &energy_channels {
            data.push(ch[i]);
        }
    }
    let mut out = features.with_data((t, f + 1, c), data)?;
    out.non_local_rows += 1;
    Ok(out)
}

/// Inverse of [`append_energy`]: drops the trailing non-local row and returns
/// the static energy values.
pub fn remove_energy(features: &UtteranceFeatures) -> Result<(UtteranceFeatures, Vec<f64>)> {
    let (t, f, c) = features.shape();
    if features.non_local_rows == 0 || f == 0 {
        return Err(Error::Dimension("features carry no energy row".into()));
    }
    let mut data = Vec::with_capacity(t * (f - 1) * c);
    let mut energy = Vec::with_capacity(t);
    for i in 0..t {
        let frame = features.frame(i);
        data.extend_from_slice(&frame[..(f - 1) * c]);
        energy.push(frame[(f - 1) * c + CHANNEL_STATIC]);
    }
    let mut out = features.with_data((t, f - 1, c), data)?;
    out.non_local_rows -= 1;
    Ok((out, energy))
}
