//! CNN/DNN acoustic models.
//!
//! Activations are `(channel, frequency, time)` tensors. A network reads one
//! spliced window per example, runs it through one or more streams whose
//! outputs are concatenated, then through shared layers and a final affine
//! layer with a softmax. Every layer has a forward pass, a backward pass and
//! a forward-mode directional derivative, which together give exact
//! gradients and Gauss-Newton vector products.

mod data;
mod dropout;
mod graph;
mod layers;
mod params;
mod spec;
mod tensor;

pub use data::{Dataset, FrameRef};
pub use dropout::{dropout_apply, dropout_mask, DropoutMode, DropoutPlan, LayerSeeds};
pub use graph::{
    build_multiscale, cross_entropy, softmax, BatchContext, BatchLoss, ForwardContext, MaskContext, Network, Node,
    NodeOp, PoolChoices, Tape, REDUCTION_CHUNK,
};
pub use layers::{pool_lp, pool_max, pool_stochastic, sample_index, stochastic_probabilities, ConvOp, Phase, PoolOp};
pub use params::{checksum, ParamBlock, ParamLayout, ParameterVector};
pub use spec::{
    default_bands, Activation, Band, ConvLayerSpec, LayerSpec, MultiScaleSpec, NetworkSpec, PoolAxis, PoolKind,
    PoolingSpec, WeightSharing, DEFAULT_LWS_BANDS,
};
pub use tensor::{Shape, Tensor};
