//! Per-layer kernels. Every op provides a forward pass that records what
//! the backward pass needs, a backward pass (input gradient plus parameter
//! gradient), and a forward-mode directional derivative used for
//! Gauss-Newton products.

use super::spec::{Activation, ConvLayerSpec, PoolAxis, PoolKind, PoolingSpec};
use super::tensor::{Shape, Tensor};
use crate::rng::{counter_uniform, derive_key};
use crate::{Error, Result};

/// Resolved band of a convolution: weight set `group` reads input rows
/// `in_start..` and writes `out_count` output rows starting at `out_start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedBand {
    pub in_start: usize,
    pub out_start: usize,
    pub out_count: usize,
}

#[derive(Debug, Clone)]
pub struct ConvOp {
    pub maps: usize,
    pub in_channels: usize,
    pub kf: usize,
    pub kt: usize,
    pub sf: usize,
    pub st: usize,
    pub bands: Vec<ResolvedBand>,
    pub out_time: usize,
}

impl ConvOp {
    pub fn resolve(
        spec: &ConvLayerSpec,
        input: Shape,
        bands: &[super::spec::Band],
        layer: &str,
    ) -> Result<(Self, Shape)> {
        let [kf, kt] = spec.filter_size;
        let [sf, st] = spec.stride;
        if spec.feature_maps == 0 {
            return Err(Error::layer(layer, "feature_maps must be at least 1"));
        }
        if kf == 0 || kt == 0 || sf == 0 || st == 0 {
            return Err(Error::layer(layer, "filter size and stride must be positive"));
        }
        if kf > input.freq || kt > input.time {
            return Err(Error::layer(
                layer,
                format!("filter {kf}x{kt} does not fit input {}x{} (freq x time)", input.freq, input.time),
            ));
        }
        let out_time = (input.time - kt) / st + 1;
        let mut resolved = Vec::with_capacity(bands.len());
        let mut covered = 0usize;
        let mut out_start = 0usize;
        for (i, b) in bands.iter().enumerate() {
            if b.start > covered {
                return Err(Error::layer(
                    layer,
                    format!("bands leave frequency rows {covered}..{} uncovered", b.start),
                ));
            }
            if i > 0 && b.start < bands[i - 1].start {
                return Err(Error::layer(layer, "bands must be sorted by start"));
            }
            if b.width < kf {
                return Err(Error::layer(layer, format!("band {i} is narrower than the filter")));
            }
            if b.start + b.width > input.freq {
                return Err(Error::layer(layer, format!("band {i} extends past the frequency axis")));
            }
            let out_count = (b.width - kf) / sf + 1;
            resolved.push(ResolvedBand { in_start: b.start, out_start, out_count });
            out_start += out_count;
            covered = covered.max(b.start + b.width);
        }
        if covered != input.freq {
            return Err(Error::layer(layer, format!("bands leave frequency rows {covered}..{} uncovered", input.freq)));
        }
        let op =
            ConvOp { maps: spec.feature_maps, in_channels: input.channels, kf, kt, sf, st, bands: resolved, out_time };
        Ok((op, Shape::new(spec.feature_maps, out_start, out_time)))
    }

    fn weights_per_group(&self) -> usize {
        self.maps * self.in_channels * self.kf * self.kt
    }

    pub fn param_len(&self) -> usize {
        self.bands.len() * (self.weights_per_group() + self.maps)
    }

    fn bias_offset(&self) -> usize {
        self.bands.len() * self.weights_per_group()
    }

    #[inline]
    fn widx(&self, g: usize, o: usize, c: usize, i: usize, j: usize) -> usize {
        g * self.weights_per_group() + ((o * self.in_channels + c) * self.kf + i) * self.kt + j
    }

    /// `y = W * x + b` (correlation, no kernel flip). With `with_bias`
    /// false the bias term is left out, which the directional derivative
    /// uses for the `W * rx` part.
    fn correlate(&self, w: &[f64], x: &Tensor, out: &mut Tensor, with_bias: bool) {
        let bias = self.bias_offset();
        for (g, band) in self.bands.iter().enumerate() {
            for o in 0..self.maps {
                let b = if with_bias { w[bias + g * self.maps + o] } else { 0.0 };
                for jf in 0..band.out_count {
                    let f0 = band.in_start + jf * self.sf;
                    for jt in 0..self.out_time {
                        let t0 = jt * self.st;
                        let mut acc = b;
                        for c in 0..self.in_channels {
                            for i in 0..self.kf {
                                let xrow = x.idx(c, f0 + i, t0);
                                let wrow = self.widx(g, o, c, i, 0);
                                for j in 0..self.kt {
                                    acc += w[wrow + j] * x.data[xrow + j];
                                }
                            }
                        }
                        let oi = out.idx(o, band.out_start + jf, jt);
                        out.data[oi] += acc;
                    }
                }
            }
        }
    }

    pub fn forward(&self, w: &[f64], x: &Tensor, out_shape: Shape) -> Tensor {
        let mut y = Tensor::zeros(out_shape);
        self.correlate(w, x, &mut y, true);
        y
    }

    /// `ry = W * rx + V * x + vb`.
    pub fn rop(&self, w: &[f64], v: &[f64], x: &Tensor, rx: Option<&Tensor>, out_shape: Shape) -> Tensor {
        let mut ry = Tensor::zeros(out_shape);
        self.correlate(v, x, &mut ry, true);
        if let Some(rx) = rx {
            self.correlate(w, rx, &mut ry, false);
        }
        ry
    }

    /// Accumulates the parameter gradient into `gw` and returns the input
    /// gradient when `need_input_grad`.
    pub fn backward(
        &self,
        w: &[f64],
        x: &Tensor,
        dy: &Tensor,
        gw: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let bias = self.bias_offset();
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for (g, band) in self.bands.iter().enumerate() {
            for o in 0..self.maps {
                for jf in 0..band.out_count {
                    let f0 = band.in_start + jf * self.sf;
                    for jt in 0..self.out_time {
                        let d = dy.at(o, band.out_start + jf, jt);
                        if d == 0.0 {
                            continue;
                        }
                        gw[bias + g * self.maps + o] += d;
                        let t0 = jt * self.st;
                        for c in 0..self.in_channels {
                            for i in 0..self.kf {
                                let xrow = x.idx(c, f0 + i, t0);
                                let wrow = self.widx(g, o, c, i, 0);
                                for j in 0..self.kt {
                                    gw[wrow + j] += d * x.data[xrow + j];
                                }
                                if let Some(dx) = dx.as_mut() {
                                    for j in 0..self.kt {
                                        dx.data[xrow + j] += d * w[wrow + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kf * self.kt
    }
}

#[derive(Debug, Clone)]
pub struct FullOp {
    pub inputs: usize,
    pub units: usize,
}

impl FullOp {
    pub fn param_len(&self) -> usize {
        self.units * (self.inputs + 1)
    }

    fn affine(&self, w: &[f64], x: &[f64], out: &mut [f64], with_bias: bool) {
        let bias = self.units * self.inputs;
        for (u, o) in out.iter_mut().enumerate() {
            let row = &w[u * self.inputs..(u + 1) * self.inputs];
            let mut acc = if with_bias { w[bias + u] } else { 0.0 };
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    pub fn forward(&self, w: &[f64], x: &Tensor) -> Tensor {
        let mut y = Tensor::zeros(Shape::vector(self.units));
        self.affine(w, &x.data, &mut y.data, true);
        y
    }

    pub fn rop(&self, w: &[f64], v: &[f64], x: &Tensor, rx: Option<&Tensor>) -> Tensor {
        let mut ry = Tensor::zeros(Shape::vector(self.units));
        self.affine(v, &x.data, &mut ry.data, true);
        if let Some(rx) = rx {
            self.affine(w, &rx.data, &mut ry.data, false);
        }
        ry
    }

    pub fn backward(
        &self,
        w: &[f64],
        x: &Tensor,
        dy: &Tensor,
        gw: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let bias = self.units * self.inputs;
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for u in 0..self.units {
            let d = dy.data[u];
            if d == 0.0 {
                continue;
            }
            gw[bias + u] += d;
            let grow = &mut gw[u * self.inputs..(u + 1) * self.inputs];
            for (g, xi) in grow.iter_mut().zip(&x.data) {
                *g += d * xi;
            }
            if let Some(dx) = dx.as_mut() {
                let wrow = &w[u * self.inputs..(u + 1) * self.inputs];
                for (a, b) in dx.data.iter_mut().zip(wrow) {
                    *a += d * b;
                }
            }
        }
        dx
    }
}

/// Whether random layers sample (training) or use their expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

/// What the pooling backward pass needs.
#[derive(Debug, Clone)]
pub enum PoolRecord {
    /// Selected input index per output (max and stochastic training).
    Selected(Vec<usize>),
    /// Local derivative `ds_j / da_i` for every member of every region.
    Jacobian(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct PoolOp {
    pub spec: PoolingSpec,
    pub in_shape: Shape,
    pub out_shape: Shape,
}

impl PoolOp {
    pub fn resolve(spec: &PoolingSpec, input: Shape, layer: &str) -> Result<(Self, Shape)> {
        spec.validate_shape(layer)?;
        let extent = match spec.axis {
            PoolAxis::Frequency => input.freq,
            PoolAxis::Time => input.time,
        };
        if extent < spec.size {
            return Err(Error::layer(layer, format!("pool size {} exceeds axis extent {extent}", spec.size)));
        }
        let n = (extent - spec.size) / spec.stride + 1;
        let out = match spec.axis {
            PoolAxis::Frequency => Shape::new(input.channels, n, input.time),
            PoolAxis::Time => Shape::new(input.channels, input.freq, n),
        };
        Ok((PoolOp { spec: spec.clone(), in_shape: input, out_shape: out }, out))
    }

    /// Flat input indices of the region feeding output `(c, f, t)`.
    fn region(&self, c: usize, f: usize, t: usize, buf: &mut Vec<usize>) {
        buf.clear();
        let s = self.in_shape;
        for k in 0..self.spec.size {
            let (fi, ti) = match self.spec.axis {
                PoolAxis::Frequency => (f * self.spec.stride + k, t),
                PoolAxis::Time => (f, t * self.spec.stride + k),
            };
            buf.push((c * s.freq + fi) * s.time + ti);
        }
    }

    /// `sample_key` drives stochastic pooling in training; `frozen`
    /// replays previously selected indices instead of sampling.
    pub fn forward(
        &self,
        x: &Tensor,
        phase: Phase,
        sample_key: u64,
        frozen: Option<&[usize]>,
        layer: &str,
    ) -> Result<(Tensor, PoolRecord)> {
        let mut y = Tensor::zeros(self.out_shape);
        let n_out = y.len();
        let mut region = Vec::with_capacity(self.spec.size);
        let mut vals = vec![0.0; self.spec.size];
        let mut selected = Vec::new();
        let mut jac = Vec::new();
        let stochastic_train = self.spec.kind == PoolKind::Stochastic && phase == Phase::Train;
        if let Some(fz) = frozen {
            if fz.len() != n_out {
                return Err(Error::layer(layer, "frozen pooling indices do not match the output size"));
            }
        }
        let o = self.out_shape;
        let mut j = 0;
        for c in 0..o.channels {
            for f in 0..o.freq {
                for t in 0..o.time {
                    self.region(c, f, t, &mut region);
                    for (v, &i) in vals.iter_mut().zip(&region) {
                        *v = x.data[i];
                    }
                    match self.spec.kind {
                        PoolKind::Max => {
                            let (k, m) = pool_max(&vals);
                            y.data[j] = m;
                            selected.push(region[k]);
                        }
                        PoolKind::Lp => {
                            let (s, d) = lp_with_derivative(&vals, &self.spec).map_err(|e| Error::layer(layer, e))?;
                            y.data[j] = s;
                            jac.extend(d);
                        }
                        PoolKind::Stochastic if stochastic_train => {
                            let k = match frozen {
                                Some(fz) => fz[j],
                                None => {
                                    let u = counter_uniform(sample_key, j as u64);
                                    let k = sample_index(&vals, u).map_err(|e| Error::layer(layer, e))?;
                                    region[k]
                                }
                            };
                            y.data[j] = x.data[k];
                            selected.push(k);
                        }
                        PoolKind::Stochastic => {
                            let (s, d) = stochastic_expectation(&vals).map_err(|e| Error::layer(layer, e))?;
                            y.data[j] = s;
                            jac.extend(d);
                        }
                    }
                    j += 1;
                }
            }
        }
        let record = match self.spec.kind {
            PoolKind::Max => PoolRecord::Selected(selected),
            PoolKind::Stochastic if stochastic_train => PoolRecord::Selected(selected),
            _ => PoolRecord::Jacobian(jac),
        };
        Ok((y, record))
    }

    pub fn backward(&self, record: &PoolRecord, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(self.in_shape);
        match record {
            PoolRecord::Selected(sel) => {
                for (d, &i) in dy.data.iter().zip(sel) {
                    dx.data[i] += d;
                }
            }
            PoolRecord::Jacobian(jac) => {
                let mut region = Vec::with_capacity(self.spec.size);
                let o = self.out_shape;
                let mut j = 0;
                for c in 0..o.channels {
                    for f in 0..o.freq {
                        for t in 0..o.time {
                            self.region(c, f, t, &mut region);
                            let d = dy.data[j];
                            for (k, &i) in region.iter().enumerate() {
                                dx.data[i] += d * jac[j * self.spec.size + k];
                            }
                            j += 1;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn rop(&self, record: &PoolRecord, rx: &Tensor) -> Tensor {
        let mut ry = Tensor::zeros(self.out_shape);
        match record {
            PoolRecord::Selected(sel) => {
                for (r, &i) in ry.data.iter_mut().zip(sel) {
                    *r = rx.data[i];
                }
            }
            PoolRecord::Jacobian(jac) => {
                let mut region = Vec::with_capacity(self.spec.size);
                let o = self.out_shape;
                let mut j = 0;
                for c in 0..o.channels {
                    for f in 0..o.freq {
                        for t in 0..o.time {
                            self.region(c, f, t, &mut region);
                            ry.data[j] =
                                region.iter().enumerate().map(|(k, &i)| jac[j * self.spec.size + k] * rx.data[i]).sum();
                            j += 1;
                        }
                    }
                }
            }
        }
        ry
    }

    /// Derives the per-layer stochastic sampling key.
    pub fn sample_key(base: u64, node: usize, frame: u64) -> u64 {
        derive_key(&[base, node as u64, frame])
    }
}

/// Max over a region; returns `(index, value)` with ties broken to the
/// lowest index.
pub fn pool_max(region: &[f64]) -> (usize, f64) {
    assert!(!region.is_empty(), "empty pooling region");
    let mut best = 0;
    for (i, &v) in region.iter().enumerate().skip(1) {
        if v > region[best] {
            best = i;
        }
    }
    (best, region[best])
}

/// `(sum a_i^p)^(1/p)`; with `normalize`, the sum is divided by the region
/// size first; with `absolute`, `|a_i|` is pooled.
pub fn pool_lp(region: &[f64], p: f64, normalize: bool, absolute: bool) -> std::result::Result<f64, String> {
    let spec = PoolingSpec {
        kind: PoolKind::Lp,
        p_exponent: p,
        size: region.len(),
        stride: region.len(),
        axis: PoolAxis::Frequency,
        normalize,
        absolute,
    };
    lp_with_derivative(region, &spec).map(|(s, _)| s)
}

fn lp_with_derivative(region: &[f64], spec: &PoolingSpec) -> std::result::Result<(f64, Vec<f64>), String> {
    let p = spec.p_exponent;
    if !spec.absolute {
        if let Some(a) = region.iter().find(|&&a| a < 0.0) {
            return Err(format!(
                "lp pooling got negative activation {a}; enable `absolute` or put a ReLU before pooling"
            ));
        }
    }
    let mags: Vec<f64> = region.iter().map(|a| a.abs()).collect();
    // scale by the max for stability at large p
    let m = mags.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Ok((0.0, vec![0.0; region.len()]));
    }
    let n = if spec.normalize { region.len() as f64 } else { 1.0 };
    let sum: f64 = mags.iter().map(|a| (a / m).powf(p)).sum::<f64>() / n;
    let s = m * sum.powf(1.0 / p);
    // ds/da_i = (1/n) * (a_i / s)^(p - 1) * sign(a_i)
    let d = region
        .iter()
        .zip(&mags)
        .map(|(&a, &mag)| {
            let g = (mag / s).powf(p - 1.0) / n;
            if a < 0.0 {
                -g
            } else {
                g
            }
        })
        .collect();
    Ok((s, d))
}

/// Multinomial probabilities `a_i / sum a_k`. An all-zero region gives the
/// uniform distribution.
pub fn stochastic_probabilities(region: &[f64]) -> std::result::Result<Vec<f64>, String> {
    if let Some(a) = region.iter().find(|&&a| a < 0.0) {
        return Err(format!("stochastic pooling got negative activation {a}"));
    }
    let total: f64 = region.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / region.len() as f64; region.len()]);
    }
    Ok(region.iter().map(|a| a / total).collect())
}

/// Index drawn from the region's multinomial with uniform variate `u`.
pub fn sample_index(region: &[f64], u: f64) -> std::result::Result<usize, String> {
    let probs = stochastic_probabilities(region)?;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(region.len() - 1))
}

/// Test-time stochastic pooling: `sum p_i a_i = sum a_i^2 / sum a_i`, with
/// its derivative.
fn stochastic_expectation(region: &[f64]) -> std::result::Result<(f64, Vec<f64>), String> {
    stochastic_probabilities(region)?;
    let s: f64 = region.iter().sum();
    if s == 0.0 {
        return Ok((0.0, vec![0.0; region.len()]));
    }
    let q: f64 = region.iter().map(|a| a * a).sum();
    let d = region.iter().map(|a| (2.0 * a * s - q) / (s * s)).collect();
    Ok((q / s, d))
}

/// Stochastic pooling of one region. Training samples an index with
/// probability proportional to its activation and returns `(value,
/// Some(index))`; testing returns the probability-weighted average.
pub fn pool_stochastic(region: &[f64], u: f64, phase: Phase) -> std::result::Result<(f64, Option<usize>), String> {
    match phase {
        Phase::Train => {
            let i = sample_index(region, u)?;
            Ok((region[i], Some(i)))
        }
        Phase::Test => stochastic_expectation(region).map(|(s, _)| (s, None)),
    }
}

pub fn activation_forward(kind: Activation, x: &Tensor) -> Tensor {
    let data = match kind {
        Activation::Relu => x.data.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Sigmoid => x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    };
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise derivative of the activation given its input and output.
pub fn activation_derivative(kind: Activation, x: &Tensor, y: &Tensor) -> Vec<f64> {
    match kind {
        Activation::Relu => x.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        Activation::Sigmoid => y.data.iter().map(|&s| s * (1.0 - s)).collect(),
    }
}
