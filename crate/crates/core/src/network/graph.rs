//! Compiled networks: shape checking, forward passes with a tape, exact
//! gradients and Gauss-Newton vector products, per example and batched.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::data::{Dataset, FrameRef};
use super::dropout::{dropout_mask, DropoutPlan, LayerSeeds};
use super::layers::{activation_derivative, activation_forward, ConvOp, FullOp, Phase, PoolOp, PoolRecord};
use super::params::{ParamLayout, ParameterVector};
use super::spec::{
    default_bands, Activation, Band, LayerSpec, MultiScaleSpec, NetworkSpec, WeightSharing, DEFAULT_LWS_BANDS,
};
use super::tensor::{Shape, Tensor};
use crate::par::{map_chunks, pairwise_sum_vecs, Exec};
use crate::rng::derive_key;
use crate::{Error, Result};

/// Frames per reduction chunk. Fixed so sums do not depend on threading.
pub const REDUCTION_CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub enum NodeOp {
    Conv(ConvOp),
    Pool(PoolOp),
    Activation(Activation),
    Dropout { id: u32 },
    Full(FullOp),
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Position in evaluation order across all streams and the trunk.
    pub index: usize,
    pub name: String,
    pub kind: &'static str,
    pub op: NodeOp,
    pub input: Shape,
    pub output: Shape,
    /// Parameter block in the layout, for conv and full nodes.
    pub block: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub input: Shape,
    pub streams: Vec<Vec<Node>>,
    /// Shared layers including the final output layer.
    pub trunk: Vec<Node>,
    pub merge_dim: usize,
    pub layout: ParamLayout,
}

/// Dropout masks for one example.
#[derive(Debug, Clone, Copy)]
pub struct MaskContext<'a> {
    pub plan: &'a DropoutPlan,
    pub seeds: &'a LayerSeeds,
}

/// Everything that makes a forward pass of one example reproducible.
#[derive(Debug, Clone, Copy)]
pub struct ForwardContext<'a> {
    pub phase: Phase,
    pub masks: Option<MaskContext<'a>>,
    /// Frame index, keys dropout masks and pooling samples.
    pub frame: u64,
    pub pool_key: u64,
    /// Replays stochastic pooling selections from an earlier pass.
    pub frozen: Option<&'a PoolChoices>,
}

impl ForwardContext<'_> {
    pub fn test() -> Self {
        ForwardContext { phase: Phase::Test, masks: None, frame: 0, pool_key: 0, frozen: None }
    }

    pub fn train(pool_key: u64, frame: u64) -> Self {
        ForwardContext { phase: Phase::Train, masks: None, frame, pool_key, frozen: None }
    }
}

/// Selected input indices of stochastic pooling nodes, by node index.
pub type PoolChoices = BTreeMap<usize, Vec<usize>>;

#[derive(Debug, Clone)]
enum Aux {
    None,
    Pool(PoolRecord),
    Derivative(Vec<f64>),
    Mask(Vec<f64>),
}

/// Values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Tape {
    /// Stochastic pooling selections made during this pass.
    pub fn pool_choices(&self, net: &Network) -> PoolChoices {
        net.nodes()
            .filter(|n| matches!(n.op, NodeOp::Pool(_)))
            .filter_map(|n| match &self.aux[n.index] {
                Aux::Pool(PoolRecord::Selected(s)) => Some((n.index, s.clone())),
                _ => None,
            })
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn compile_layers(
    layers: &[LayerSpec],
    mut shape: Shape,
    prefix: &str,
    next_index: &mut usize,
    layout: &mut ParamLayout,
) -> Result<(Vec<Node>, Shape)> {
    let mut nodes = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let name = format!("{prefix}{}", i + 1);
        let (op, out, block) = match l {
            LayerSpec::Conv(c) => {
                let bands: Vec<Band> = match c.sharing {
                    WeightSharing::Full => {
                        if !c.bands.is_empty() {
                            return Err(Error::layer(&name, "full weight sharing takes no bands"));
                        }
                        vec![Band { start: 0, width: shape.freq }]
                    }
                    WeightSharing::Limited if c.bands.is_empty() => {
                        default_bands(shape.freq, c.filter_size[0], c.stride[0].max(1), DEFAULT_LWS_BANDS)
                    }
                    WeightSharing::Limited => c.bands.clone(),
                };
                let (op, out) = ConvOp::resolve(c, shape, &bands, &name)?;
                let groups = op.bands.len();
                let block = layout.push(
                    &name,
                    groups * op.maps * op.in_channels * op.kf * op.kt,
                    groups * op.maps,
                    op.fan_in(),
                );
                (NodeOp::Conv(op), out, Some(block))
            }
            LayerSpec::Pool(p) => {
                p.validate(&name)?;
                let (op, out) = PoolOp::resolve(p, shape, &name)?;
                (NodeOp::Pool(op), out, None)
            }
            LayerSpec::Activation { function } => (NodeOp::Activation(*function), shape, None),
            LayerSpec::Dropout { id } => (NodeOp::Dropout { id: *id }, shape, None),
            LayerSpec::Full { units } => {
                if *units == 0 {
                    return Err(Error::layer(&name, "full layer needs at least one unit"));
                }
                let op = FullOp { inputs: shape.len(), units: *units };
                let block = layout.push(&name, op.units * op.inputs, op.units, op.inputs);
                (NodeOp::Full(op), Shape::vector(*units), Some(block))
            }
        };
        nodes.push(Node { index: *next_index, name, kind: l.kind_name(), op, input: shape, output: out, block });
        *next_index += 1;
        shape = out;
    }
    Ok((nodes, shape))
}

impl Network {
    /// Checks every shape and builds the parameter layout.
    pub fn compile(spec: &NetworkSpec) -> Result<Self> {
        let input = spec.input_shape();
        if input.is_empty() {
            return Err(Error::config("network.input", "every input dimension must be positive"));
        }
        if spec.num_classes < 2 {
            return Err(Error::config("network.num_classes", "need at least two classes"));
        }
        let mut layout = ParamLayout::default();
        let mut next = 0;
        let stream_specs: Vec<Vec<LayerSpec>> =
            if spec.streams.is_empty() { vec![Vec::new()] } else { spec.streams.clone() };
        let mut streams = Vec::with_capacity(stream_specs.len());
        let mut merge_dim = 0;
        let mut merge_time = None;
        for (s, layers) in stream_specs.iter().enumerate() {
            let prefix = if stream_specs.len() == 1 { "layer".to_string() } else { format!("stream{}.layer", s + 1) };
            let (nodes, out) = compile_layers(layers, input, &prefix, &mut next, &mut layout)?;
            match merge_time {
                None => merge_time = Some(out.time),
                Some(t) if t != out.time => {
                    return Err(Error::layer(
                        format!("stream{}", s + 1),
                        format!("incompatible merge extents: time extent {} vs {t}", out.time),
                    ))
                }
                _ => {}
            }
            merge_dim += out.len();
            streams.push(nodes);
        }
        let mut trunk_specs = spec.trunk.clone();
        trunk_specs.push(LayerSpec::Full { units: spec.num_classes });
        let (mut trunk, _) = compile_layers(&trunk_specs, Shape::vector(merge_dim), "trunk", &mut next, &mut layout)?;
        let n = trunk.len();
        for (i, node) in trunk.iter_mut().enumerate() {
            node.name = if i + 1 == n { "output".to_string() } else { format!("trunk{}", i + 1) };
        }
        if let Some(last) = layout.blocks.last_mut() {
            last.name = "output".to_string();
        }
        Ok(Network { spec: spec.clone(), input, streams, trunk, merge_dim, layout })
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.streams.iter().flatten().chain(&self.trunk)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes().count()
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn init_params(&self, seed: u64) -> ParameterVector {
        ParameterVector::init(&self.layout, seed)
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    /// Per-layer shapes and parameter counts.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input {}", self.input);
        let mut row = |n: &Node| {
            let params = n.block.map_or(0, |b| self.layout.blocks[b].len());
            let _ = writeln!(
                s,
                "{:<18} {:<16} {:>10} -> {:<10} params {params}",
                n.name,
                n.kind,
                n.input.to_string(),
                n.output.to_string()
            );
        };
        for (i, stream) in self.streams.iter().enumerate() {
            if self.streams.len() > 1 {
                row(&Node {
                    index: usize::MAX,
                    name: format!("stream{}", i + 1),
                    kind: "input",
                    op: NodeOp::Activation(Activation::Relu),
                    input: self.input,
                    output: self.input,
                    block: None,
                });
            }
            for n in stream {
                row(n);
            }
        }
        let _ = writeln!(s, "merge {}", self.merge_dim);
        for n in &self.trunk {
            let params = n.block.map_or(0, |b| self.layout.blocks[b].len());
            let _ = writeln!(
                s,
                "{:<18} {:<16} {:>10} -> {:<10} params {params}",
                n.name,
                n.kind,
                n.input.to_string(),
                n.output.to_string()
            );
        }
        let _ = writeln!(s, "total parameters {}", self.num_params());
        s
    }

    fn weights<'p>(&self, node: &Node, params: &'p [f64]) -> &'p [f64] {
        node.block.map_or(&[][..], |b| &params[self.layout.blocks[b].range()])
    }

    fn run_node(&self, node: &Node, params: &[f64], x: &Tensor, ctx: &ForwardContext<'_>) -> Result<(Tensor, Aux)> {
        Ok(match &node.op {
            NodeOp::Conv(op) => (op.forward(self.weights(node, params), x, node.output), Aux::None),
            NodeOp::Full(op) => (op.forward(self.weights(node, params), x), Aux::None),
            NodeOp::Pool(op) => {
                let key = PoolOp::sample_key(ctx.pool_key, node.index, ctx.frame);
                let frozen = ctx.frozen.and_then(|f| f.get(&node.index)).map(Vec::as_slice);
                let (y, rec) = op.forward(x, ctx.phase, key, frozen, &node.name)?;
                (y, Aux::Pool(rec))
            }
            NodeOp::Activation(kind) => {
                let y = activation_forward(*kind, x);
                let d = activation_derivative(*kind, x, &y);
                (y, Aux::Derivative(d))
            }
            NodeOp::Dropout { id } => match (ctx.phase, ctx.masks) {
                (Phase::Train, Some(m)) => {
                    let p = m.plan.probability(*id)?;
                    let seed = m.seeds.get(*id)?;
                    let mask = dropout_mask(seed, ctx.frame, x.len(), p);
                    let data = x.data.iter().zip(&mask).map(|(a, b)| a * b).collect();
                    (Tensor::from_vec(x.shape(), data), Aux::Mask(mask))
                }
                _ => (x.clone(), Aux::None),
            },
        })
    }

    /// Forward pass recording everything the backward pass needs.
    pub fn forward(&self, params: &[f64], x: &Tensor, ctx: &ForwardContext<'_>) -> Result<Tape> {
        self.check_params(params)?;
        if x.shape() != self.input {
            return Err(Error::layer("input", format!("expected shape {}, got {}", self.input, x.shape())));
        }
        let n = self.num_nodes();
        let mut inputs = Vec::with_capacity(n);
        let mut aux = Vec::with_capacity(n);
        let mut merged = Vec::with_capacity(self.merge_dim);
        for stream in &self.streams {
            let mut cur = x.clone();
            for node in stream {
                let (y, a) = self.run_node(node, params, &cur, ctx)?;
                inputs.push(cur);
                aux.push(a);
                cur = y;
            }
            merged.extend_from_slice(&cur.data);
        }
        let mut cur = Tensor::from_vec(Shape::vector(self.merge_dim), merged);
        for node in &self.trunk {
            let (y, a) = self.run_node(node, params, &cur, ctx)?;
            inputs.push(cur);
            aux.push(a);
            cur = y;
        }
        let logits = cur.data;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        let probs = softmax(&logits);
        Ok(Tape { inputs, aux, logits, probs })
    }

    /// Class posteriors for one input.
    pub fn posteriors(&self, params: &[f64], x: &Tensor, ctx: &ForwardContext<'_>) -> Result<Vec<f64>> {
        Ok(self.forward(params, x, ctx)?.probs)
    }

    fn backward_node(
        &self,
        node: &Node,
        params: &[f64],
        tape: &Tape,
        dy: &Tensor,
        grad: &mut [f64],
        need_dx: bool,
    ) -> Option<Tensor> {
        let x = &tape.inputs[node.index];
        match (&node.op, &tape.aux[node.index]) {
            (NodeOp::Conv(op), _) => {
                let r = self.layout.blocks[node.block.expect("conv block")].range();
                op.backward(&params[r.clone()], x, dy, &mut grad[r], need_dx)
            }
            (NodeOp::Full(op), _) => {
                let r = self.layout.blocks[node.block.expect("full block")].range();
                op.backward(&params[r.clone()], x, dy, &mut grad[r], need_dx)
            }
            (NodeOp::Pool(op), Aux::Pool(rec)) => Some(op.backward(rec, dy)),
            (_, Aux::Derivative(d)) | (_, Aux::Mask(d)) => {
                let data = dy.data.iter().zip(d).map(|(a, b)| a * b).collect();
                Some(Tensor::from_vec(node.input, data))
            }
            _ => Some(dy.clone()),
        }
    }

    /// Backpropagates `d loss / d logits` through a recorded pass and
    /// returns the parameter gradient.
    pub fn backward(&self, params: &[f64], tape: &Tape, dlogits: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        self.backward_into(params, tape, dlogits, &mut grad);
        grad
    }

    fn backward_into(&self, params: &[f64], tape: &Tape, dlogits: &[f64], grad: &mut [f64]) {
        let mut dy = Tensor::from_vec(Shape::vector(dlogits.len()), dlogits.to_vec());
        for node in self.trunk.iter().rev() {
            dy = self.backward_node(node, params, tape, &dy, grad, true).expect("trunk input gradient");
        }
        let mut offset = 0;
        for stream in &self.streams {
            let out_shape = stream.last().map_or(self.input, |n| n.output);
            let len = out_shape.len();
            let mut d = Tensor::from_vec(out_shape, dy.data[offset..offset + len].to_vec());
            offset += len;
            for (i, node) in stream.iter().enumerate().rev() {
                match self.backward_node(node, params, tape, &d, grad, i > 0) {
                    Some(next) => d = next,
                    None => break,
                }
            }
        }
    }

    fn rop_node(&self, node: &Node, params: &[f64], v: &[f64], tape: &Tape, rx: Option<&Tensor>) -> Option<Tensor> {
        let x = &tape.inputs[node.index];
        match (&node.op, &tape.aux[node.index]) {
            (NodeOp::Conv(op), _) => {
                let r = self.layout.blocks[node.block.expect("conv block")].range();
                Some(op.rop(&params[r.clone()], &v[r], x, rx, node.output))
            }
            (NodeOp::Full(op), _) => {
                let r = self.layout.blocks[node.block.expect("full block")].range();
                Some(op.rop(&params[r.clone()], &v[r], x, rx))
            }
            (NodeOp::Pool(op), Aux::Pool(rec)) => rx.map(|rx| op.rop(rec, rx)),
            (_, Aux::Derivative(d)) | (_, Aux::Mask(d)) => rx.map(|rx| {
                let data = rx.data.iter().zip(d).map(|(a, b)| a * b).collect();
                Tensor::from_vec(node.output, data)
            }),
            _ => rx.cloned(),
        }
    }

    /// Directional derivative of the logits along `v` (the R-operator).
    pub fn logits_directional(&self, params: &[f64], v: &[f64], tape: &Tape) -> Vec<f64> {
        let mut merged = Vec::with_capacity(self.merge_dim);
        for stream in &self.streams {
            let mut r: Option<Tensor> = None;
            for node in stream {
                r = self.rop_node(node, params, v, tape, r.as_ref());
            }
            let len = stream.last().map_or(self.input, |n| n.output).len();
            match r {
                Some(r) => merged.extend_from_slice(&r.data),
                None => merged.extend(std::iter::repeat_n(0.0, len)),
            }
        }
        let mut r = Some(Tensor::from_vec(Shape::vector(self.merge_dim), merged));
        for node in &self.trunk {
            r = self.rop_node(node, params, v, tape, r.as_ref());
        }
        r.map_or_else(|| vec![0.0; self.spec.num_classes], |t| t.data)
    }

    /// `J^T H J v` for one recorded pass, where `H = diag(p) - p p^T` is the
    /// softmax cross-entropy Hessian with respect to the logits.
    pub fn gauss_newton_example(&self, params: &[f64], v: &[f64], tape: &Tape) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        self.gauss_newton_into(params, v, tape, &mut out);
        out
    }

    fn gauss_newton_into(&self, params: &[f64], v: &[f64], tape: &Tape, out: &mut [f64]) {
        let rz = self.logits_directional(params, v, tape);
        let p = &tape.probs;
        let pr: f64 = p.iter().zip(&rz).map(|(a, b)| a * b).sum();
        let hr: Vec<f64> = p.iter().zip(&rz).map(|(pi, ri)| pi * (ri - pr)).collect();
        self.backward_into(params, tape, &hr, out);
    }

    /// Loss and gradient for one labelled input.
    pub fn example_gradient(
        &self,
        params: &[f64],
        x: &Tensor,
        label: usize,
        ctx: &ForwardContext<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward(params, x, ctx)?;
        let loss = cross_entropy(&tape.logits, label);
        let mut d = tape.probs.clone();
        d[label] -= 1.0;
        Ok((loss, self.backward(params, &tape, &d)))
    }
}

/// Randomness and masks for a batch pass over a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct BatchContext<'a> {
    pub phase: Phase,
    pub plan: Option<&'a DropoutPlan>,
    /// Mask seeds per utterance of the dataset.
    pub seeds: Option<&'a [LayerSeeds]>,
    /// Keys stochastic pooling samples.
    pub pool_seed: u64,
}

impl<'a> BatchContext<'a> {
    pub fn test() -> Self {
        BatchContext { phase: Phase::Test, plan: None, seeds: None, pool_seed: 0 }
    }

    pub fn train(pool_seed: u64) -> Self {
        BatchContext { phase: Phase::Train, plan: None, seeds: None, pool_seed }
    }

    pub fn with_masks(mut self, plan: &'a DropoutPlan, seeds: &'a [LayerSeeds]) -> Self {
        self.plan = Some(plan);
        self.seeds = Some(seeds);
        self
    }

    pub fn frame_context(&self, r: FrameRef) -> ForwardContext<'a> {
        let masks = match (self.plan, self.seeds) {
            (Some(plan), Some(seeds)) if self.phase == Phase::Train => {
                Some(MaskContext { plan, seeds: &seeds[r.utt as usize] })
            }
            _ => None,
        };
        ForwardContext {
            phase: self.phase,
            masks,
            frame: u64::from(r.frame),
            pool_key: derive_key(&[self.pool_seed, u64::from(r.utt)]),
            frozen: None,
        }
    }
}

/// Summed loss statistics over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub loss_sum: f64,
    pub errors: usize,
    pub frames: usize,
}

impl BatchLoss {
    pub fn mean_loss(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.loss_sum / self.frames as f64
        }
    }

    pub fn error_rate(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.errors as f64 / self.frames as f64
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn check_seeds(data: &Dataset, ctx: &BatchContext<'_>) -> Result<()> {
    if let Some(seeds) = ctx.seeds {
        if seeds.len() != data.utterances.len() {
            return Err(Error::Dimension(format!(
                "{} mask seed sets for {} utterances",
                seeds.len(),
                data.utterances.len()
            )));
        }
    }
    Ok(())
}

fn collect<T>(parts: Vec<Result<T>>) -> Result<Vec<T>> {
    parts.into_iter().collect()
}

impl Network {
    /// Summed cross-entropy and frame errors.
    pub fn batch_loss(
        &self,
        params: &[f64],
        data: &Dataset,
        frames: &[FrameRef],
        ctx: &BatchContext<'_>,
        exec: Exec,
    ) -> Result<BatchLoss> {
        self.check_params(params)?;
        check_seeds(data, ctx)?;
        let parts = collect(map_chunks(frames, REDUCTION_CHUNK, exec, |_, chunk| {
            let mut out = vec![0.0, 0.0, 0.0];
            for &r in chunk {
                let label = data.label(r)?;
                let tape = self.forward(params, &data.input(r), &ctx.frame_context(r))?;
                out[0] += cross_entropy(&tape.logits, label);
                out[1] += f64::from(u8::from(argmax(&tape.probs) != label));
                out[2] += 1.0;
            }
            Ok(out)
        }))?;
        let s = pairwise_sum_vecs(parts).unwrap_or_else(|| vec![0.0; 3]);
        Ok(BatchLoss { loss_sum: s[0], errors: s[1] as usize, frames: s[2] as usize })
    }

    /// Summed loss and summed gradient.
    pub fn batch_gradient(
        &self,
        params: &[f64],
        data: &Dataset,
        frames: &[FrameRef],
        ctx: &BatchContext<'_>,
        exec: Exec,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        check_seeds(data, ctx)?;
        let n = self.num_params();
        let parts = collect(map_chunks(frames, REDUCTION_CHUNK, exec, |_, chunk| {
            let mut out = vec![0.0; n + 1];
            for &r in chunk {
                let label = data.label(r)?;
                let tape = self.forward(params, &data.input(r), &ctx.frame_context(r))?;
                out[n] += cross_entropy(&tape.logits, label);
                let mut d = tape.probs.clone();
                d[label] -= 1.0;
                self.backward_into(params, &tape, &d, &mut out[..n]);
            }
            Ok(out)
        }))?;
        let mut s = pairwise_sum_vecs(parts).unwrap_or_else(|| vec![0.0; n + 1]);
        let loss = s.pop().unwrap_or(0.0);
        Ok((loss, s))
    }

    /// Summed Gauss-Newton product `sum_frames J^T H J v`. With `bound`
    /// set, the masks in `ctx` must equal the ones the gradient was
    /// computed with for every utterance in the batch.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_gauss_newton(
        &self,
        params: &[f64],
        v: &[f64],
        data: &Dataset,
        frames: &[FrameRef],
        ctx: &BatchContext<'_>,
        bound: Option<&[LayerSeeds]>,
        exec: Exec,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_params(v)?;
        check_seeds(data, ctx)?;
        if let Some(bound) = bound {
            let current = ctx.seeds.ok_or_else(|| Error::MaskMismatch("curvature pass has no masks".into()))?;
            for r in frames {
                let u = r.utt as usize;
                if bound.get(u) != current.get(u) {
                    return Err(Error::MaskMismatch(format!(
                        "utterance {} uses different dropout seeds",
                        data.utterances[u].utterance_id
                    )));
                }
            }
        }
        let n = self.num_params();
        let parts = collect(map_chunks(frames, REDUCTION_CHUNK, exec, |_, chunk| {
            let mut out = vec![0.0; n];
            for &r in chunk {
                let tape = self.forward(params, &data.input(r), &ctx.frame_context(r))?;
                self.gauss_newton_into(params, v, &tape, &mut out);
            }
            Ok(out)
        }))?;
        Ok(pairwise_sum_vecs(parts).unwrap_or_else(|| vec![0.0; n]))
    }

    /// Predicted class per frame.
    pub fn classify(&self, params: &[f64], data: &Dataset, frames: &[FrameRef], exec: Exec) -> Result<Vec<usize>> {
        let parts = collect(map_chunks(frames, REDUCTION_CHUNK, exec, |_, chunk| {
            chunk
                .iter()
                .map(|&r| Ok(argmax(&self.forward(params, &data.input(r), &ForwardContext::test())?.probs)))
                .collect::<Result<Vec<usize>>>()
        }))?;
        Ok(parts.into_iter().flatten().collect())
    }
}

/// Two-stream network from a multi-scale description. With an empty full
/// stream the result is the plain convolutional topology.
pub fn build_multiscale(spec: &MultiScaleSpec) -> Result<NetworkSpec> {
    let mut streams = Vec::new();
    if !spec.full_stream.is_empty() {
        streams.push(spec.full_stream.clone());
    }
    streams.push(spec.conv_stream.clone());
    let net = NetworkSpec { input: spec.input, streams, trunk: spec.shared.clone(), num_classes: spec.num_classes };
    Network::compile(&net)?;
    Ok(net)
}
