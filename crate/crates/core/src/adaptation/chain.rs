use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::fmllr::FmllrTransform;
use super::stc::StcTransform;
use crate::features::{UtteranceFeatures, DELTA_WINDOW};
use crate::{Error, Result};

/// STC transform plus per-speaker fMLLR transforms.
#[derive(Debug, Clone)]
pub struct AdaptationChain {
    pub stc: StcTransform,
    pub speakers: BTreeMap<String, FmllrTransform>,
}

impl AdaptationChain {
    /// Adapts an utterance with its speaker's transform; unknown speakers
    /// fall back to the identity fMLLR.
    pub fn adapt(&self, utt: &UtteranceFeatures) -> Result<UtteranceFeatures> {
        match self.speakers.get(&utt.speaker_id) {
            Some(m) => adapt_features(utt, &self.stc, m),
            None => {
                log::warn!("no fMLLR transform for speaker {}; using identity", utt.speaker_id);
                let id = FmllrTransform::identity(utt.speaker_id.clone(), self.stc.dim());
                adapt_features(utt, &self.stc, &id)
            }
        }
    }
}

/// Adapted statics `S^-1 (A (S f) + b)` for each frame, with deltas
/// recomputed from the adapted statics when the input carries them.
/// Trailing non-local rows (energy) pass through unchanged.
pub fn adapt_features(
    utt: &UtteranceFeatures,
    stc: &StcTransform,
    fmllr: &FmllrTransform,
) -> Result<UtteranceFeatures> {
    if fmllr.speaker_id != utt.speaker_id {
        return Err(Error::SpeakerMismatch { transform: fmllr.speaker_id.clone(), features: utt.speaker_id.clone() });
    }
    let s_inv = stc.inverse()?;
    let combined = &s_inv * &fmllr.a * &stc.matrix;
    let offset = &s_inv * &fmllr.b;
    map_statics(utt, stc.dim(), &combined, &offset)
}

/// Maps adapted features back: `S^-1 A^-1 S (y - S^-1 b)`.
pub fn invert_adaptation(
    adapted: &UtteranceFeatures,
    stc: &StcTransform,
    fmllr: &FmllrTransform,
) -> Result<UtteranceFeatures> {
    let s_inv = stc.inverse()?;
    let a_inv = fmllr.a.clone().try_inverse().ok_or_else(|| Error::Singular("fMLLR matrix".into()))?;
    let back = &s_inv * a_inv * &stc.matrix;
    let offset = -(&back * (&s_inv * &fmllr.b));
    map_statics(adapted, stc.dim(), &back, &offset)
}

fn map_statics(
    utt: &UtteranceFeatures,
    dim: usize,
    matrix: &DMatrix<f64>,
    offset: &DVector<f64>,
) -> Result<UtteranceFeatures> {
    let (t, f, c) = utt.shape();
    if f - utt.non_local_rows != dim {
        return Err(Error::Dimension(format!(
            "transform is {dim}-dim, features have {} spectral rows",
            f - utt.non_local_rows
        )));
    }
    let statics = utt.statics();
    let mut mapped = statics.clone();
    for i in 0..t {
        let x = DVector::from_column_slice(&statics.row(i)[..dim]);
        let y = matrix * x + offset;
        mapped.row_mut(i)[..dim].copy_from_slice(y.as_slice());
    }
    let mut out = UtteranceFeatures::from_static(utt.utterance_id.clone(), utt.speaker_id.clone(), mapped)?;
    out.non_local_rows = utt.non_local_rows;
    out.labels = utt.labels.clone();
    if c == 3 {
        out = out.recompute_deltas(DELTA_WINDOW)?;
    }
    debug_assert_eq!(out.shape(), (t, f, c));
    Ok(out)
}
