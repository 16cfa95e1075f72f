use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::{CorpusSpec, Split};
use super::pipeline::{AdaptationOptions, FeatureOptions};
use crate::network::{DropoutMode, DropoutPlan, LayerSpec, Network, NetworkSpec};
use crate::optim::{HfConfig, HfDropoutMode, SgdSchedule};
use crate::rng::{derive_key, hash_str};
use crate::{Error, Result};

/// Layers of the network. Input shape and class count are filled in from the
/// feature options and the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub streams: Vec<Vec<LayerSpec>>,
    #[serde(default)]
    pub trunk: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd(SgdSchedule),
    Hf(HfConfig),
}

impl OptimizerConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Hf(_) => "hf",
        }
    }
}

/// Dropout probability applied at every listed dropout layer id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub layers: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Heldout,
    #[default]
    Test,
}

impl EvalSplit {
    pub fn split(self) -> Split {
        match self {
            EvalSplit::Heldout => Split::Heldout,
            EvalSplit::Test => Split::Test,
        }
    }
}

/// Knobs for the sweep drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    /// Hidden layers (convolutional plus fully connected) in every topology
    /// arm.
    #[serde(default = "total_layers")]
    pub total_layers: usize,
    /// Feature maps of the first, second and third convolutional layer.
    #[serde(default = "conv_maps")]
    pub conv_maps: [usize; 3],
    /// `[frequency, time]` filter of each convolutional layer.
    #[serde(default = "conv_filters")]
    pub conv_filters: [[usize; 2]; 3],
    /// Frequency pooling size after the first convolutional layer.
    #[serde(default = "two")]
    pub pool_size: usize,
    /// Fully connected width of the two-convolution reference arm, which
    /// fixes the parameter budget.
    #[serde(default = "units")]
    pub units: usize,
    #[serde(default = "two_f")]
    pub lp_exponent: f64,
    /// Allowed relative parameter mismatch between arms.
    #[serde(default = "tolerance")]
    pub param_tolerance: f64,
}

fn total_layers() -> usize {
    4
}
fn conv_maps() -> [usize; 3] {
    [8, 8, 8]
}
fn conv_filters() -> [[usize; 2]; 3] {
    [[5, 3], [3, 3], [3, 3]]
}
fn two() -> usize {
    2
}
fn units() -> usize {
    64
}
fn two_f() -> f64 {
    2.0
}
fn tolerance() -> f64 {
    0.02
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            total_layers: total_layers(),
            conv_maps: conv_maps(),
            conv_filters: conv_filters(),
            pool_size: two(),
            units: units(),
            lp_exponent: two_f(),
            param_tolerance: tolerance(),
        }
    }
}

/// A complete, declarative experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed for initialization, dropout, curvature batches and
    /// minibatch order. Seeds inside the optimizer section act as salts.
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub features: FeatureOptions,
    #[serde(default)]
    pub adaptation: AdaptationOptions,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub dropout: DropoutConfig,
    #[serde(default)]
    pub eval_split: EvalSplit,
    #[serde(default)]
    pub sweep: SweepOptions,
}

/// Key for one purpose derived from the experiment seed.
pub fn purpose_seed(seed: u64, purpose: &str) -> u64 {
    derive_key(&[seed, hash_str(purpose)])
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map_or_else(|| "<config>".to_string(), |s| format!("byte {}..{}", s.start, s.end));
            Error::config(path, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: p, message } => Error::config(format!("{}: {p}", path.display()), message),
            other => other,
        })
    }

    /// Canonical text form; the config hash is computed over it.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// SHA-256 of the canonical text form, in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// The first 16 hex digits of [`hash`](Self::hash), used for directory
    /// names.
    pub fn short_hash(&self) -> Result<String> {
        Ok(self.hash()?[..16].to_string())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input: self.features.input_shape(self.corpus.spectral_dim),
            streams: self.network.streams.clone(),
            trunk: self.network.trunk.clone(),
            num_classes: self.corpus.num_classes,
        }
    }

    fn dropout_mode(&self) -> DropoutMode {
        match &self.optimizer {
            OptimizerConfig::Sgd(_) => DropoutMode::PerPresentation,
            OptimizerConfig::Hf(h) if h.dropout_mode == HfDropoutMode::PerCgIteration => DropoutMode::PerCgIteration,
            OptimizerConfig::Hf(_) => DropoutMode::FixedPerUtterance,
        }
    }

    pub fn dropout_plan(&self) -> DropoutPlan {
        if self.dropout.layers.is_empty() || self.dropout.p == 0.0 {
            return DropoutPlan::none();
        }
        DropoutPlan::uniform(
            &self.dropout.layers,
            self.dropout.p,
            purpose_seed(self.seed, "dropout"),
            self.dropout_mode(),
        )
    }

    /// Optimizer section with its seeds combined with the experiment seed.
    pub fn seeded_optimizer(&self) -> OptimizerConfig {
        match &self.optimizer {
            OptimizerConfig::Sgd(s) => OptimizerConfig::Sgd(SgdSchedule {
                seed: derive_key(&[self.seed, s.seed, hash_str("sgd")]),
                ..s.clone()
            }),
            OptimizerConfig::Hf(h) => OptimizerConfig::Hf(HfConfig {
                master_seed: derive_key(&[self.seed, h.master_seed, hash_str("hf")]),
                ..h.clone()
            }),
        }
    }

    /// Structural validation of every section. Compiles the network to
    /// check shapes and band coverage but touches no data.
    pub fn validate(&self) -> Result<Network> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        self.corpus.validate("corpus")?;
        self.adaptation.validate("adaptation")?;
        match &self.optimizer {
            OptimizerConfig::Sgd(s) => s.validate("optimizer")?,
            OptimizerConfig::Hf(h) => h.validate("optimizer")?,
        }
        if self.corpus.heldout_per_speaker() == 0 {
            return Err(Error::config("corpus.heldout_fraction", "the held-out split would be empty"));
        }
        for (s, stream) in self.network.streams.iter().enumerate() {
            for (i, l) in stream.iter().enumerate() {
                if let LayerSpec::Pool(p) = l {
                    p.validate(&format!("network.streams[{s}][{i}]"))?;
                }
            }
        }
        for (i, l) in self.network.trunk.iter().enumerate() {
            if matches!(l, LayerSpec::Pool(_) | LayerSpec::Conv(_)) {
                return Err(Error::config(format!("network.trunk[{i}]"), "trunk layers must be fully connected"));
            }
        }
        let spec = self.network_spec();
        let net = Network::compile(&spec).map_err(|e| match e {
            e @ Error::Config { .. } => e,
            other => Error::config("network", other.to_string()),
        })?;
        self.validate_dropout(&spec)?;
        Ok(net)
    }

    fn validate_dropout(&self, spec: &NetworkSpec) -> Result<()> {
        let ids = spec.dropout_ids();
        for (i, id) in self.dropout.layers.iter().enumerate() {
            if !ids.contains(id) {
                return Err(Error::config(
                    format!("dropout.layers[{i}]"),
                    format!("no dropout layer with id {id} in the network"),
                ));
            }
        }
        if let Some(id) = ids.iter().find(|id| !self.dropout.layers.contains(id)) {
            return Err(Error::config("dropout.layers", format!("dropout layer {id} has no probability")));
        }
        if !(0.0..1.0).contains(&self.dropout.p) {
            return Err(Error::config("dropout.p", "must lie in [0, 1)"));
        }
        self.dropout_plan().validate().map_err(|e| Error::config("dropout", e.to_string()))?;
        if let OptimizerConfig::Hf(h) = &self.optimizer {
            if h.dropout_mode == HfDropoutMode::None && self.dropout_plan().is_active() {
                return Err(Error::config("optimizer.dropout_mode", "`none` conflicts with active dropout layers"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
name = "example"
seed = 3

[corpus]
num_speakers = 4
test_speakers = 1
utterances_per_speaker = 4
frames_per_utterance = 30
num_classes = 3
spectral_dim = 12
fft_bins = 65

[features]
context = 2

[network]
streams = [[
  { type = "conv", sharing = "full", feature_maps = 4, filter_size = [3, 3] },
  { type = "activation", function = "relu" },
  { type = "pool", kind = "max", size = 2, stride = 2, axis = "frequency" },
]]
trunk = [
  { type = "dropout", id = 1 },
  { type = "full", units = 16 },
  { type = "activation", function = "relu" },
]

[optimizer]
kind = "hf"
iterations = 2
dropout_mode = "fixed_per_utterance"

[dropout]
p = 0.2
layers = [1]
"#;

    #[test]
    fn example_parses_validates_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = EXAMPLE.replace("context = 2", "context = 2\nwindow = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = EXAMPLE.replace("iterations = 2", "iterations = 2\nmomentum = 0.9");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let b = ExperimentConfig { seed: 4, ..a.clone() };
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    fn path_of(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn violations_carry_field_paths() {
        let cfg = ExperimentConfig::from_toml(&EXAMPLE.replace("layers = [1]", "layers = [7]")).unwrap();
        assert_eq!(path_of(cfg.validate().unwrap_err()), "dropout.layers[0]");

        let time_pool =
            EXAMPLE.replace("size = 2, stride = 2, axis = \"frequency\"", "size = 2, stride = 2, axis = \"time\"");
        let cfg = ExperimentConfig::from_toml(&time_pool).unwrap();
        assert_eq!(path_of(cfg.validate().unwrap_err()), "network.streams[0][2].stride");

        let gap = EXAMPLE.replace(
            "sharing = \"full\", feature_maps = 4, filter_size = [3, 3] }",
            "sharing = \"limited\", feature_maps = 4, filter_size = [3, 3], bands = [{ start = 0, width = 5 }, { start = 6, width = 6 }] }",
        );
        let cfg = ExperimentConfig::from_toml(&gap).unwrap();
        let e = cfg.validate().unwrap_err();
        assert!(e.to_string().contains("uncovered"), "{e}");
        assert_eq!(path_of(e), "network");

        let cfg = ExperimentConfig::from_toml(&EXAMPLE.replace("num_classes = 3", "num_classes = 0")).unwrap();
        assert_eq!(path_of(cfg.validate().unwrap_err()), "corpus.num_classes");
    }

    #[test]
    fn none_mode_with_dropout_rejected() {
        let cfg = ExperimentConfig::from_toml(&EXAMPLE.replace("fixed_per_utterance", "none")).unwrap();
        assert_eq!(path_of(cfg.validate().unwrap_err()), "optimizer.dropout_mode");
    }
}
