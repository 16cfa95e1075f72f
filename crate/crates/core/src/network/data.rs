use super::tensor::{Shape, Tensor};
use crate::features::UtteranceFeatures;
use crate::{Error, Result};

/// One labelled frame: utterance index within a [`Dataset`] and frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub utt: u32,
    pub frame: u32,
}

/// Utterances presented to a network as spliced windows of `2 * context +
/// 1` frames centred on each frame, with edge replication.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<UtteranceFeatures>,
    pub context: usize,
}

impl Dataset {
    pub fn new(utterances: Vec<UtteranceFeatures>, context: usize) -> Result<Self> {
        if let Some(first) = utterances.first() {
            let (_, f, c) = first.shape();
            for u in &utterances {
                let (_, uf, uc) = u.shape();
                if (uf, uc) != (f, c) {
                    return Err(Error::Dimension(format!(
                        "utterance {} has {uf}x{uc} frames, expected {f}x{c}",
                        u.utterance_id
                    )));
                }
            }
        }
        Ok(Dataset { utterances, context })
    }

    /// `(channels, frequency, window)` shape of one input.
    pub fn input_shape(&self) -> Shape {
        let (_, f, c) = self.utterances.first().map_or((0, 0, 0), UtteranceFeatures::shape);
        Shape::new(c, f, 2 * self.context + 1)
    }

    pub fn num_frames(&self) -> usize {
        self.utterances.iter().map(UtteranceFeatures::num_frames).sum()
    }

    pub fn frames(&self) -> Vec<FrameRef> {
        self.frames_of(0..self.utterances.len())
    }

    pub fn frames_of(&self, utts: impl IntoIterator<Item = usize>) -> Vec<FrameRef> {
        let mut out = Vec::new();
        for u in utts {
            for t in 0..self.utterances[u].num_frames() {
                out.push(FrameRef { utt: u as u32, frame: t as u32 });
            }
        }
        out
    }

    pub fn input(&self, r: FrameRef) -> Tensor {
        let u = &self.utterances[r.utt as usize];
        let (frames, freq, channels) = u.shape();
        let width = 2 * self.context + 1;
        let mut x = Tensor::zeros(Shape::new(channels, freq, width));
        for w in 0..width {
            let t = (r.frame as i64 + w as i64 - self.context as i64).clamp(0, frames as i64 - 1) as usize;
            let row = u.frame(t);
            for f in 0..freq {
                for c in 0..channels {
                    let i = x.idx(c, f, w);
                    x.data[i] = row[f * channels + c];
                }
            }
        }
        x
    }

    pub fn label(&self, r: FrameRef) -> Result<usize> {
        let u = &self.utterances[r.utt as usize];
        let labels = u
            .labels
            .as_ref()
            .ok_or_else(|| Error::Degenerate(format!("utterance {} has no labels", u.utterance_id)))?;
        Ok(labels[r.frame as usize] as usize)
    }
}
