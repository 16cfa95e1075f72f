use serde::{Deserialize, Serialize};

use super::tensor::Shape;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSharing {
    Full,
    Limited,
}

/// A frequency band owned by one weight set of a limited-weight-sharing
/// convolution, in input frequency rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub sharing: WeightSharing,
    pub feature_maps: usize,
    /// `(frequency, time)` extent of the filter.
    pub filter_size: [usize; 2],
    #[serde(default = "unit_stride")]
    pub stride: [usize; 2],
    /// Only used with limited sharing. Empty means "split the axis into
    /// [`DEFAULT_LWS_BANDS`] equal bands".
    #[serde(default)]
    pub bands: Vec<Band>,
}

fn unit_stride() -> [usize; 2] {
    [1, 1]
}

pub const DEFAULT_LWS_BANDS: usize = 2;

impl ConvLayerSpec {
    pub fn full(feature_maps: usize, filter_size: [usize; 2]) -> Self {
        ConvLayerSpec { sharing: WeightSharing::Full, feature_maps, filter_size, stride: [1, 1], bands: Vec::new() }
    }

    pub fn limited(feature_maps: usize, filter_size: [usize; 2], bands: Vec<Band>) -> Self {
        ConvLayerSpec { sharing: WeightSharing::Limited, feature_maps, filter_size, stride: [1, 1], bands }
    }
}

/// Equal contiguous bands whose outputs tile the full-sharing output
/// positions, so a weight-tied limited layer reproduces full sharing.
pub fn default_bands(input_freq: usize, filter_freq: usize, stride_freq: usize, count: usize) -> Vec<Band> {
    if input_freq < filter_freq {
        return Vec::new();
    }
    let outputs = (input_freq - filter_freq) / stride_freq + 1;
    let count = count.clamp(1, outputs);
    let mut bands = Vec::with_capacity(count);
    let mut first = 0;
    for b in 0..count {
        let n = outputs / count + usize::from(b < outputs % count);
        let start = first * stride_freq;
        let mut width = (n - 1) * stride_freq + filter_freq;
        if b + 1 == count {
            width = input_freq - start;
        }
        bands.push(Band { start, width });
        first += n;
    }
    bands
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Lp,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolAxis {
    Frequency,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingSpec {
    pub kind: PoolKind,
    #[serde(default = "default_p")]
    pub p_exponent: f64,
    pub size: usize,
    pub stride: usize,
    pub axis: PoolAxis,
    /// lp only: divide the power sum by the region size before the root.
    #[serde(default)]
    pub normalize: bool,
    /// lp only: pool `|a|` so negative inputs are allowed.
    #[serde(default)]
    pub absolute: bool,
}

fn default_p() -> f64 {
    2.0
}

impl PoolingSpec {
    pub fn new(kind: PoolKind, size: usize, stride: usize, axis: PoolAxis) -> Self {
        PoolingSpec { kind, p_exponent: 2.0, size, stride, axis, normalize: false, absolute: false }
    }

    pub fn overlapping(&self) -> bool {
        self.stride < self.size
    }

    /// Full validation, including the rule that time pooling must overlap.
    pub fn validate(&self, path: &str) -> Result<()> {
        self.validate_shape(path)?;
        if self.axis == PoolAxis::Time && !self.overlapping() {
            return Err(Error::config(
                format!("{path}.stride"),
                "pooling in time requires overlapping windows (stride < size); \
                 non-overlapping pooling in time subsamples the signal",
            ));
        }
        Ok(())
    }

    /// Size, stride and exponent checks only.
    pub fn validate_shape(&self, path: &str) -> Result<()> {
        if self.size < 1 {
            return Err(Error::config(format!("{path}.size"), "must be at least 1"));
        }
        if self.stride < 1 || self.stride > self.size {
            return Err(Error::config(format!("{path}.stride"), "must satisfy 1 <= stride <= size"));
        }
        if self.kind == PoolKind::Lp && !(self.p_exponent >= 1.0) {
            return Err(Error::config(format!("{path}.p_exponent"), "must be at least 1 for lp pooling"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvLayerSpec),
    Pool(PoolingSpec),
    Activation {
        function: Activation,
    },
    /// Masks the input of the following layer; `id` keys the dropout plan.
    Dropout {
        id: u32,
    },
    Full {
        units: usize,
    },
}

impl LayerSpec {
    pub fn relu() -> Self {
        LayerSpec::Activation { function: Activation::Relu }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(c) if c.sharing == WeightSharing::Limited => "conv-lws",
            LayerSpec::Conv(_) => "conv-fws",
            LayerSpec::Pool(p) => match p.kind {
                PoolKind::Max => "pool-max",
                PoolKind::Lp => "pool-lp",
                PoolKind::Stochastic => "pool-stochastic",
            },
            LayerSpec::Activation { function: Activation::Relu } => "relu",
            LayerSpec::Activation { function: Activation::Sigmoid } => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Full { .. } => "full",
        }
    }
}

/// Network topology. Every stream reads the same input; stream outputs are
/// flattened and concatenated, then run through the trunk and a final
/// affine layer producing `num_classes` logits for the softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, frequency, time]` of one spliced example.
    pub input: [usize; 3],
    pub streams: Vec<Vec<LayerSpec>>,
    #[serde(default)]
    pub trunk: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input[0], self.input[1], self.input[2])
    }

    /// The baseline CNN: two convolutional layers (128 and 256 feature
    /// maps) with frequency pooling of size 3 after the first, followed by
    /// four fully connected layers of 1024 units.
    pub fn default_cnn(input: [usize; 3], num_classes: usize) -> Self {
        let conv_stream = vec![
            LayerSpec::Conv(ConvLayerSpec::full(128, [9, 9])),
            LayerSpec::relu(),
            LayerSpec::Pool(PoolingSpec::new(PoolKind::Max, 3, 3, PoolAxis::Frequency)),
            LayerSpec::Conv(ConvLayerSpec::full(256, [4, 3])),
            LayerSpec::relu(),
        ];
        let mut trunk = Vec::new();
        for _ in 0..4 {
            trunk.push(LayerSpec::Full { units: 1024 });
            trunk.push(LayerSpec::relu());
        }
        NetworkSpec { input, streams: vec![conv_stream], trunk, num_classes }
    }

    /// Inserts dropout in front of the given 1-based fully connected layers
    /// (the output layer counts as the last one). With
    /// `count_conv_layers`, convolutional layers are included in the
    /// numbering. The dropout id is the layer number.
    pub fn with_dropout_before(mut self, layers: &[usize], count_conv_layers: bool) -> Self {
        let mut number = 0;
        let insert = |list: &mut Vec<LayerSpec>, number: &mut usize| {
            let mut out = Vec::with_capacity(list.len() + layers.len());
            for l in list.drain(..) {
                let counted = match &l {
                    LayerSpec::Full { .. } => true,
                    LayerSpec::Conv(_) => count_conv_layers,
                    _ => false,
                };
                if counted {
                    *number += 1;
                    if layers.contains(number) {
                        out.push(LayerSpec::Dropout { id: *number as u32 });
                    }
                }
                out.push(l);
            }
            *list = out;
        };
        for s in self.streams.iter_mut() {
            insert(s, &mut number);
        }
        insert(&mut self.trunk, &mut number);
        number += 1;
        if layers.contains(&number) {
            self.trunk.push(LayerSpec::Dropout { id: number as u32 });
        }
        self
    }

    /// Every dropout id in the topology.
    pub fn dropout_ids(&self) -> Vec<u32> {
        self.streams
            .iter()
            .flatten()
            .chain(&self.trunk)
            .filter_map(|l| match l {
                LayerSpec::Dropout { id } => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.streams.iter().flatten().chain(&self.trunk).filter(|l| matches!(l, LayerSpec::Conv(_))).count()
    }
}

/// Two-stream topology: a fully connected stream and a convolutional stream
/// over the same input, merged and fed to shared fully connected layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleSpec {
    pub input: [usize; 3],
    #[serde(default)]
    pub full_stream: Vec<LayerSpec>,
    pub conv_stream: Vec<LayerSpec>,
    pub shared: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl MultiScaleSpec {
    /// Two fully connected layers next to the baseline's two convolutional
    /// layers, merged into four shared fully connected layers.
    pub fn default_cnn(input: [usize; 3], num_classes: usize, units: usize) -> Self {
        let base = NetworkSpec::default_cnn(input, num_classes);
        let full_stream =
            vec![LayerSpec::Full { units }, LayerSpec::relu(), LayerSpec::Full { units }, LayerSpec::relu()];
        MultiScaleSpec { input, full_stream, conv_stream: base.streams[0].clone(), shared: base.trunk, num_classes }
    }
}
