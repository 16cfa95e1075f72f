use nalgebra::DVector;

use crate::par::{self, Exec};
use crate::rng::KeyedRng;
use crate::{Error, Result};

use super::VARIANCE_FLOOR_SCALE;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Frames per accumulation chunk.
const CHUNK: usize = 256;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl DiagonalGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Dimension("GMM needs matching, non-empty weights/means/variances".into()));
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::Dimension("GMM components disagree on dimension".into()));
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::config("weights", "must be nonnegative and sum to 1"));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::config("variances", "must be positive"));
        }
        Ok(DiagonalGmm { weights, means, variances })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Per-component `ln w_k + ln N(x; mu_k, var_k)`.
    pub fn component_log_likelihoods(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                let d = xi - m;
                acc += v.ln() + d * d / v;
            }
            *o = self.weights[k].ln() - 0.5 * (acc + self.dim() as f64 * LN_2PI);
        }
    }

    /// Log-likelihood of `x` and the component posteriors, written to `post`.
    pub fn posteriors(&self, x: &[f64], post: &mut [f64]) -> f64 {
        self.component_log_likelihoods(x, post);
        let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in post.iter_mut() {
            *p /= total;
        }
        max + total.ln()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut post = vec![0.0; self.num_components()];
        self.posteriors(x, &mut post)
    }

    /// Total log-likelihood of a set of frames.
    pub fn total_log_likelihood(&self, frames: &[Vec<f64>], exec: Exec) -> f64 {
        let parts = par::map_chunks(frames, CHUNK, exec, |_, chunk| {
            let mut post = vec![0.0; self.num_components()];
            chunk.iter().map(|x| self.posteriors(x, &mut post)).collect::<Vec<_>>()
        });
        par::pairwise_sum(&parts.concat())
    }

    /// Component means and variances after the linear map `x -> S x`,
    /// keeping the diagonal of the transformed covariance.
    pub fn transformed_means(&self, s: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
        self.means.iter().map(|m| (s * DVector::from_column_slice(m)).as_slice().to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GmmTrainOptions {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for GmmTrainOptions {
    fn default() -> Self {
        GmmTrainOptions { components: 64, iterations: 10, seed: 0, exec: Exec::default() }
    }
}

/// Log-likelihood after initialization and after each EM iteration, plus the
/// number of components that had to be reseeded.
#[derive(Debug, Clone, Default)]
pub struct GmmTrainTrace {
    pub log_likelihood: Vec<f64>,
    pub reseeded: usize,
}

struct EmStats {
    count: Vec<f64>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl EmStats {
    fn flatten(self) -> Vec<f64> {
        let mut v = self.count;
        v.extend(self.first.into_iter().flatten());
        v.extend(self.second.into_iter().flatten());
        v
    }

    fn unflatten(v: Vec<f64>, k: usize, d: usize) -> Self {
        let count = v[..k].to_vec();
        let first = v[k..k + k * d].chunks(d).map(<[f64]>::to_vec).collect();
        let second = v[k + k * d..].chunks(d).map(<[f64]>::to_vec).collect();
        EmStats { count, first, second }
    }
}

fn accumulate(gmm: &DiagonalGmm, frames: &[Vec<f64>], exec: Exec) -> (EmStats, f64) {
    let (k, d) = (gmm.num_components(), gmm.dim());
    let parts = par::map_chunks(frames, CHUNK, exec, |_, chunk| {
        let mut s = EmStats { count: vec![0.0; k], first: vec![vec![0.0; d]; k], second: vec![vec![0.0; d]; k] };
        let mut post = vec![0.0; k];
        let mut ll = 0.0;
        for x in chunk {
            ll += gmm.posteriors(x, &mut post);
            for c in 0..k {
                let g = post[c];
                if g == 0.0 {
                    continue;
                }
                s.count[c] += g;
                for j in 0..d {
                    s.first[c][j] += g * x[j];
                    s.second[c][j] += g * x[j] * x[j];
                }
            }
        }
        let mut flat = s.flatten();
        flat.push(ll);
        flat
    });
    let mut total = par::pairwise_sum_vecs(parts).unwrap();
    let ll = total.pop().unwrap();
    (EmStats::unflatten(total, k, d), ll)
}

fn global_moments(frames: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = frames[0].len();
    let n = frames.len() as f64;
    let mut mean = vec![0.0; d];
    for x in frames {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in frames {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Maximum-likelihood diagonal GMM by EM.
///
/// Initialization places component means on distinct frames chosen by a
/// keyed shuffle, with the global variance and uniform weights. Components
/// whose occupancy collapses are reseeded from a perturbed copy of the
/// heaviest component.
pub fn train_diag_gmm(frames: &[Vec<f64>], opts: &GmmTrainOptions) -> Result<(DiagonalGmm, GmmTrainTrace)> {
    let k = opts.components;
    if k == 0 {
        return Err(Error::config("components", "must be at least 1"));
    }
    if frames.len() < k {
        return Err(Error::Degenerate(format!("{} frames for {k} components", frames.len())));
    }
    let d = frames[0].len();
    if d == 0 || frames.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension("frames must share a nonzero dimension".into()));
    }
    let (global_mean, global_var) = global_moments(frames);
    let floor: Vec<f64> = global_var.iter().map(|v| (v * VARIANCE_FLOOR_SCALE).max(1e-12)).collect();
    let init_var: Vec<f64> = global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();

    let mut rng = KeyedRng::from_parts(&[opts.seed, 0x676d6d]);
    let means = if k == 1 {
        vec![global_mean]
    } else {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        rng.shuffle(&mut order);
        order[..k].iter().map(|&i| frames[i].clone()).collect()
    };
    let mut gmm = DiagonalGmm { weights: vec![1.0 / k as f64; k], means, variances: vec![init_var; k] };
    let mut trace = GmmTrainTrace::default();

    for _ in 0..opts.iterations {
        let (stats, ll) = accumulate(&gmm, frames, opts.exec);
        trace.log_likelihood.push(ll);
        let n: f64 = stats.count.iter().sum();
        let mut dead = Vec::new();
        for c in 0..k {
            let g = stats.count[c];
            if g < 1e-3 * d as f64 {
                dead.push(c);
                continue;
            }
            gmm.weights[c] = g / n;
            for j in 0..d {
                let m = stats.first[c][j] / g;
                gmm.means[c][j] = m;
                gmm.variances[c][j] = (stats.second[c][j] / g - m * m).max(floor[j]);
            }
        }
        for &c in &dead {
            let donor = (0..k)
                .filter(|i| !dead.contains(i))
                .max_by(|&a, &b| stats.count[a].total_cmp(&stats.count[b]))
                .ok_or_else(|| Error::Degenerate("every GMM component is empty".into()))?;
            log::info!("GMM component {c} is empty; reseeding from component {donor}");
            let half = gmm.weights[donor] / 2.0;
            gmm.weights[donor] = half;
            gmm.weights[c] = half;
            gmm.variances[c] = gmm.variances[donor].clone();
            gmm.means[c] = gmm.means[donor]
                .iter()
                .zip(&gmm.variances[donor])
                .map(|(m, v)| m + 0.2 * v.sqrt() * rng.normal())
                .collect();
            trace.reseeded += 1;
        }
        let total: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= total);
    }
    trace.log_likelihood.push(gmm.total_log_likelihood(frames, opts.exec));
    Ok((gmm, trace))
}
