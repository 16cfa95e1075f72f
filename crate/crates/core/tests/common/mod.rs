#![allow(dead_code)]

use acnn::network::{cross_entropy, ForwardContext, Network, Shape, Tensor};
use acnn::rng::KeyedRng;

pub fn random_tensor(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = KeyedRng::from_parts(&[seed, 77]);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.range(lo, hi)).collect())
}

pub fn random_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = KeyedRng::from_parts(&[seed, 91]);
    (0..n).map(|_| scale * rng.normal()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative error between the analytic parameter gradient and
/// central finite differences (step 1e-5). Stochastic pooling choices from
/// the unperturbed pass are held fixed.
pub fn max_param_gradient_error(
    net: &Network,
    params: &[f64],
    x: &Tensor,
    label: usize,
    ctx: &ForwardContext<'_>,
) -> f64 {
    let base = net.forward(params, x, ctx).unwrap();
    let frozen = base.pool_choices(net);
    let ctx = ForwardContext { frozen: Some(&frozen), ..*ctx };
    let (_, grad) = net.example_gradient(params, x, label, &ctx).unwrap();
    let h = 1e-5;
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let lp = cross_entropy(&net.forward(&p, x, &ctx).unwrap().logits, label);
        p[i] = orig - h;
        let lm = cross_entropy(&net.forward(&p, x, &ctx).unwrap().logits, label);
        p[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd));
    }
    worst
}

/// Dense Gauss-Newton matrix `J^T H J` with the logit Jacobian `J` taken
/// by central differences.
pub fn dense_gauss_newton(net: &Network, params: &[f64], x: &Tensor, ctx: &ForwardContext<'_>) -> Vec<Vec<f64>> {
    let n = params.len();
    let base = net.forward(params, x, ctx).unwrap();
    let k = base.probs.len();
    let h = 1e-5;
    let mut jac = vec![vec![0.0; n]; k];
    let mut p = params.to_vec();
    for i in 0..n {
        let orig = p[i];
        p[i] = orig + h;
        let zp = net.forward(&p, x, ctx).unwrap().logits;
        p[i] = orig - h;
        let zm = net.forward(&p, x, ctx).unwrap().logits;
        p[i] = orig;
        for c in 0..k {
            jac[c][i] = (zp[c] - zm[c]) / (2.0 * h);
        }
    }
    let pr = &base.probs;
    let hess: Vec<Vec<f64>> =
        (0..k).map(|a| (0..k).map(|b| if a == b { pr[a] - pr[a] * pr[b] } else { -pr[a] * pr[b] }).collect()).collect();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += jac[a][i] * hess[a][b] * jac[b][j];
                }
            }
            g[i][j] = s;
        }
    }
    g
}

use acnn::features::{FrameMatrix, UtteranceFeatures};
use acnn::network::Dataset;

/// Class-dependent Gaussian frames: class `k` has mean `separation * e_k`
/// (wrapping over dimensions) plus unit-scale noise.
pub fn toy_dataset(utts: usize, frames: usize, dims: usize, classes: usize, separation: f64, seed: u64) -> Dataset {
    let mut out = Vec::new();
    for u in 0..utts {
        let mut rng = KeyedRng::from_parts(&[seed, u as u64]);
        let mut rows = Vec::with_capacity(frames);
        let mut labels = Vec::with_capacity(frames);
        for _ in 0..frames {
            let k = rng.below(classes);
            let row: Vec<f64> =
                (0..dims).map(|d| if d % classes == k { separation } else { 0.0 } + 0.5 * rng.normal()).collect();
            rows.push(row);
            labels.push(k as u32);
        }
        let utt = UtteranceFeatures::from_static(
            format!("utt{u}"),
            format!("spk{}", u / 2),
            FrameMatrix::from_rows(&rows).unwrap(),
        )
        .unwrap()
        .with_labels(labels)
        .unwrap();
        out.push(utt);
    }
    Dataset::new(out, 0).unwrap()
}

/// Random symmetric positive definite matrix with eigenvalues in `[1, cond]`.
pub fn random_spd(n: usize, cond: f64, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = KeyedRng::from_parts(&[seed, 5]);
    let m = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.normal());
    let q = m.qr().q();
    let eig =
        nalgebra::DVector::from_fn(n, |i, _| if n == 1 { 1.0 } else { 1.0 + (cond - 1.0) * i as f64 / (n - 1) as f64 });
    &q * nalgebra::DMatrix::from_diagonal(&eig) * q.transpose()
}
