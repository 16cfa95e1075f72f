use std::collections::BTreeMap;

use crate::network::{DropoutPlan, LayerSeeds};
use crate::{Error, Result};

/// Dropout seeds per `(hf_iteration, utterance, layer)`, written once per
/// HF iteration before CG starts and read-only afterwards.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedRegistry {
    entries: BTreeMap<usize, BTreeMap<String, LayerSeeds>>,
}

impl SeedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, hf_iteration: usize) -> bool {
        self.entries.contains_key(&hf_iteration)
    }

    pub fn get(&self, hf_iteration: usize, utterance_id: &str) -> Option<&LayerSeeds> {
        self.entries.get(&hf_iteration)?.get(utterance_id)
    }

    pub fn seed(&self, hf_iteration: usize, utterance_id: &str, layer_id: u32) -> Option<u64> {
        self.get(hf_iteration, utterance_id)?.0.get(&layer_id).copied()
    }

    /// Number of `(utterance, layer)` entries for one iteration.
    pub fn len(&self, hf_iteration: usize) -> usize {
        self.entries.get(&hf_iteration).map_or(0, |m| m.values().map(|s| s.0.len()).sum())
    }

    /// Seeds for `utterance_ids` in order.
    pub fn seeds_for(&self, hf_iteration: usize, utterance_ids: &[&str]) -> Result<Vec<LayerSeeds>> {
        utterance_ids
            .iter()
            .map(|u| {
                self.get(hf_iteration, u).cloned().ok_or_else(|| {
                    Error::MaskMismatch(format!("no seeds for utterance {u} in HF iteration {hf_iteration}"))
                })
            })
            .collect()
    }

    /// Drops iterations before `hf_iteration`.
    pub fn prune_before(&mut self, hf_iteration: usize) {
        self.entries = self.entries.split_off(&hf_iteration);
    }
}

/// Writes one seed per `(utterance, dropout layer)` for `hf_iteration`,
/// each a pure hash of `(master_seed, utterance, layer, hf_iteration)`.
pub fn assign_dropout_seeds(
    registry: &mut SeedRegistry,
    utterance_ids: &[&str],
    plan: &DropoutPlan,
    hf_iteration: usize,
) -> Result<()> {
    if registry.contains(hf_iteration) {
        return Err(Error::RegistryPopulated(hf_iteration));
    }
    let entries =
        utterance_ids.iter().map(|u| (u.to_string(), plan.utterance_seeds(u, &[hf_iteration as u64]))).collect();
    registry.entries.insert(hf_iteration, entries);
    Ok(())
}
