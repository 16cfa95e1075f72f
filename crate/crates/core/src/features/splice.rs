use super::UtteranceFeatures;

/// Context window around frame `t` with edge replication, as a
/// `(2 * context + 1) x F x C` block in `(w, f, c)` order.
pub fn splice_frame(features: &UtteranceFeatures, t: usize, context: usize) -> Vec<f64> {
    let n = features.num_frames();
    let mut out = Vec::with_capacity((2 * context + 1) * features.frame_dim());
    for w in 0..=2 * context {
        let src = (t + w).saturating_sub(context).min(n - 1);
        out.extend_from_slice(features.frame(src));
    }
    out
}

/// Splices every frame of an utterance. Output count equals the frame count.
pub fn splice_context(features: &UtteranceFeatures, context: usize) -> Vec<Vec<f64>> {
    (0..features.num_frames()).map(|t| splice_frame(features, t, context)).collect()
}
