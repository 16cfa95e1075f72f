use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{counter_uniform, derive_key, hash_str};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    /// A fresh mask for every presentation of an utterance (SGD).
    PerPresentation,
    /// One mask per utterance and layer, fixed for a whole HF iteration.
    FixedPerUtterance,
    /// A fresh mask for every CG iteration (for comparison only; breaks
    /// conjugacy).
    PerCgIteration,
}

/// Dropout probabilities per dropout layer and the keyed mask scheme.
///
/// The keep decision for unit `i` of frame `t` under a layer seed `s` is
/// `u(s, t, i) >= p` where `u` is a counter-based uniform stream, so masks
/// are a pure function of `(seed, frame, unit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutPlan {
    pub probabilities: BTreeMap<u32, f64>,
    pub master_seed: u64,
    pub mode: DropoutMode,
}

impl DropoutPlan {
    pub fn none() -> Self {
        DropoutPlan { probabilities: BTreeMap::new(), master_seed: 0, mode: DropoutMode::PerPresentation }
    }

    pub fn uniform(ids: &[u32], p: f64, master_seed: u64, mode: DropoutMode) -> Self {
        DropoutPlan { probabilities: ids.iter().map(|&i| (i, p)).collect(), master_seed, mode }
    }

    pub fn validate(&self) -> Result<()> {
        for (id, &p) in &self.probabilities {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout.probabilities.{id}"), "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn probability(&self, layer_id: u32) -> Result<f64> {
        self.probabilities.get(&layer_id).copied().ok_or(Error::UnknownDropoutLayer(layer_id))
    }

    pub fn is_active(&self) -> bool {
        self.probabilities.values().any(|&p| p > 0.0)
    }

    /// Seed for one `(utterance, layer)` pair under an extra salt (HF
    /// iteration, presentation count, ...).
    pub fn layer_seed(&self, utterance_id: &str, layer_id: u32, salt: &[u64]) -> u64 {
        let mut parts = vec![self.master_seed, hash_str(utterance_id), u64::from(layer_id)];
        parts.extend_from_slice(salt);
        derive_key(&parts)
    }

    /// Per-layer seeds for one utterance.
    pub fn utterance_seeds(&self, utterance_id: &str, salt: &[u64]) -> LayerSeeds {
        LayerSeeds(self.probabilities.keys().map(|&id| (id, self.layer_seed(utterance_id, id, salt))).collect())
    }
}

/// Mask seeds for every dropout layer of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LayerSeeds(pub BTreeMap<u32, u64>);

impl LayerSeeds {
    pub fn get(&self, layer_id: u32) -> Result<u64> {
        self.0.get(&layer_id).copied().ok_or(Error::UnknownDropoutLayer(layer_id))
    }
}

/// Scale factors (`0` or `1/(1-p)`) for `units` inputs of frame `frame`.
pub fn dropout_mask(seed: u64, frame: u64, units: usize, p: f64) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; units];
    }
    let key = derive_key(&[seed, frame]);
    let keep = 1.0 / (1.0 - p);
    (0..units as u64).map(|i| if counter_uniform(key, i) >= p { keep } else { 0.0 }).collect()
}

/// Applies the plan's mask for `(utterance, layer)` to a layer input:
/// `(1 / (1 - p)) * (r * y)`.
pub fn dropout_apply(input: &[f64], plan: &DropoutPlan, utterance_id: &str, layer_id: u32) -> Result<Vec<f64>> {
    let p = plan.probability(layer_id)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout.probabilities.{layer_id}"), "must lie in [0, 1)"));
    }
    let seed = plan.layer_seed(utterance_id, layer_id, &[]);
    let mask = dropout_mask(seed, 0, input.len(), p);
    Ok(input.iter().zip(&mask).map(|(x, m)| x * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(p: f64) -> DropoutPlan {
        DropoutPlan::uniform(&[3, 4], p, 11, DropoutMode::FixedPerUtterance)
    }

    #[test]
    fn zero_probability_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(dropout_apply(&x, &plan(0.0), "u", 3).unwrap(), x);
    }

    #[test]
    fn half_probability_scales_kept_units_by_two() {
        let x = vec![1.5; 64];
        let y = dropout_apply(&x, &plan(0.5), "u", 3).unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || v == 3.0));
        assert!(y.contains(&0.0) && y.contains(&3.0));
    }

    #[test]
    fn masks_are_pure_and_utterance_specific() {
        let x = vec![1.0; 32];
        let p = plan(0.5);
        assert_eq!(dropout_apply(&x, &p, "a", 4).unwrap(), dropout_apply(&x, &p, "a", 4).unwrap());
        let differing = (0..100)
            .filter(|i| {
                dropout_apply(&x, &p, &format!("utt{i}"), 4).unwrap()
                    != dropout_apply(&x, &p, &format!("utt{}", i + 1000), 4).unwrap()
            })
            .count();
        assert_eq!(differing, 100);
    }

    #[test]
    fn unknown_layer_is_an_error() {
        assert!(matches!(dropout_apply(&[1.0], &plan(0.5), "u", 9), Err(Error::UnknownDropoutLayer(9))));
    }

    fn mean_output(x: &[f64], plan: &DropoutPlan, n: usize) -> Vec<f64> {
        let mut mean = vec![0.0; x.len()];
        for i in 0..n {
            let y = dropout_apply(x, plan, &format!("u{i}"), 3).unwrap();
            for (m, v) in mean.iter_mut().zip(&y) {
                *m += v / n as f64;
            }
        }
        mean
    }

    #[test]
    fn expectation_matches_input() {
        // The 2% band is about two standard deviations at this sample size,
        // so it holds for most master seeds but not all (0 and 2 miss it).
        // The calibrated test below covers unbiasedness across seeds.
        let x: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let plan = DropoutPlan::uniform(&[3], 0.5, 1, DropoutMode::FixedPerUtterance);
        for (m, v) in mean_output(&x, &plan, 10_000).iter().zip(&x) {
            assert!((m - v).abs() <= 0.02 * v, "{m} vs {v}");
        }
    }

    #[test]
    fn expectation_is_unbiased_across_seeds() {
        // relative error of the mean has standard deviation 1/sqrt(n)
        let x = vec![1.0; 8];
        let n = 10_000;
        for seed in 0..20 {
            let plan = DropoutPlan::uniform(&[3], 0.5, seed, DropoutMode::FixedPerUtterance);
            for m in mean_output(&x, &plan, n) {
                assert!((m - 1.0).abs() <= 4.0 / (n as f64).sqrt(), "seed {seed}: {m}");
            }
        }
    }
}
