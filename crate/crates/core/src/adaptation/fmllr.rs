use nalgebra::{DMatrix, DVector};

use super::gmm::DiagonalGmm;
use super::ROW_SWEEPS;
use crate::linalg::{cofactor_row, log_abs_det};
use crate::par::{self, Exec};
use crate::{Error, Result};

const CHUNK: usize = 128;

/// Reciprocal condition estimate below which a row's statistics are
/// considered ill-conditioned.
const MIN_RCOND: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FmllrOptions {
    pub iterations: usize,
    pub row_sweeps: usize,
    pub exec: Exec,
}

impl Default for FmllrOptions {
    fn default() -> Self {
        FmllrOptions { iterations: 10, row_sweeps: ROW_SWEEPS, exec: Exec::default() }
    }
}

/// Per-speaker affine feature transform `x -> A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmllrTransform {
    pub speaker_id: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Auxiliary objective before and after each iteration's row sweeps,
    /// as `(before, after)` pairs under that iteration's statistics.
    pub auxiliary: Vec<(f64, f64)>,
    /// `sum_t log p(A x_t + b) + T log|det A|` at identity and after each
    /// iteration.
    pub log_likelihood: Vec<f64>,
}

impl FmllrTransform {
    pub fn identity(speaker_id: impl Into<String>, dim: usize) -> Self {
        FmllrTransform {
            speaker_id: speaker_id.into(),
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
            auxiliary: Vec::new(),
            log_likelihood: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x) + &self.b).as_slice().to_vec()
    }
}

/// Log-likelihood of speaker frames under the GMM after the transform,
/// including the Jacobian term.
pub fn fmllr_objective(gmm: &DiagonalGmm, frames: &[Vec<f64>], a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let logdet = log_abs_det(a);
    let parts = par::map_chunks(frames, CHUNK, Exec::default(), |_, chunk| {
        chunk
            .iter()
            .map(|x| gmm.log_likelihood((a * DVector::from_column_slice(x) + b).as_slice()) + logdet)
            .collect::<Vec<_>>()
    });
    par::pairwise_sum(&parts.concat())
}

struct RowStats {
    /// `G_i`, `(D+1) x (D+1)` each.
    g: Vec<DMatrix<f64>>,
    /// `k_i`, length `D+1` each.
    k: Vec<DVector<f64>>,
    beta: f64,
}

fn accumulate(gmm: &DiagonalGmm, frames: &[Vec<f64>], w: &DMatrix<f64>, exec: Exec) -> RowStats {
    let d = gmm.dim();
    let e = d + 1;
    let stride = e * e + e;
    let parts = par::map_chunks(frames, CHUNK, exec, |_, chunk| {
        let mut acc = vec![0.0; d * stride];
        let mut post = vec![0.0; gmm.num_components()];
        let mut xi = vec![1.0; e];
        for x in chunk {
            xi[1..].copy_from_slice(x);
            let y = w * DVector::from_column_slice(&xi);
            gmm.posteriors(y.as_slice(), &mut post);
            for i in 0..d {
                let (mut inv_var, mut mean_term) = (0.0, 0.0);
                for (c, &g) in post.iter().enumerate() {
                    if g < 1e-12 {
                        continue;
                    }
                    let iv = g / gmm.variances[c][i];
                    inv_var += iv;
                    mean_term += iv * gmm.means[c][i];
                }
                let base = i * stride;
                for r in 0..e {
                    let s = inv_var * xi[r];
                    let row = &mut acc[base + r * e..base + (r + 1) * e];
                    for (a, xc) in row.iter_mut().zip(&xi) {
                        *a += s * xc;
                    }
                }
                for r in 0..e {
                    acc[base + e * e + r] += mean_term * xi[r];
                }
            }
        }
        acc
    });
    let total = par::pairwise_sum_vecs(parts).unwrap();
    let mut g = Vec::with_capacity(d);
    let mut k = Vec::with_capacity(d);
    for i in 0..d {
        let base = i * stride;
        g.push(DMatrix::from_row_slice(e, e, &total[base..base + e * e]));
        k.push(DVector::from_column_slice(&total[base + e * e..base + stride]));
    }
    RowStats { g, k, beta: frames.len() as f64 }
}

fn auxiliary(w: &DMatrix<f64>, stats: &RowStats) -> f64 {
    let d = w.nrows();
    let a = w.columns(1, d).into_owned();
    let mut q = stats.beta * log_abs_det(&a);
    for i in 0..d {
        let row = w.row(i).transpose();
        q -= 0.5 * (row.dot(&(&stats.g[i] * &row)) - 2.0 * row.dot(&stats.k[i]));
    }
    q
}

/// Estimates a constrained MLLR (fMLLR) transform for one speaker.
///
/// Each iteration recomputes posteriors with the current transform,
/// accumulates the per-row statistics, and updates the rows of `[b A]` in
/// ascending order with the closed-form cofactor solution. Speakers with
/// fewer frames than dimensions get the identity transform.
pub fn estimate_fmllr(
    gmm: &DiagonalGmm,
    speaker_id: &str,
    frames: &[Vec<f64>],
    opts: &FmllrOptions,
) -> Result<FmllrTransform> {
    let d = gmm.dim();
    if frames.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension(format!("fMLLR expects {d}-dim frames")));
    }
    let mut out = FmllrTransform::identity(speaker_id, d);
    if frames.len() < d {
        log::info!("speaker {speaker_id}: {} frames < {d} dims, using identity fMLLR", frames.len());
        return Ok(out);
    }
    if opts.iterations == 0 {
        return Ok(out);
    }
    // W = [b A]
    let mut w = DMatrix::zeros(d, d + 1);
    w.columns_mut(1, d).fill_with_identity();
    out.log_likelihood.push(fmllr_objective(gmm, frames, &out.a, &out.b));

    for _ in 0..opts.iterations {
        let stats = accumulate(gmm, frames, &w, opts.exec);
        let before = auxiliary(&w, &stats);
        for _ in 0..opts.row_sweeps {
            for i in 0..d {
                let gi = &stats.g[i];
                let Some(g_inv) = gi.clone().try_inverse() else {
                    log::warn!("speaker {speaker_id}: row {i} statistics singular, row skipped");
                    continue;
                };
                let rcond = {
                    let sv = gi.singular_values();
                    sv.min() / sv.max()
                };
                if !(rcond > MIN_RCOND) {
                    log::warn!("speaker {speaker_id}: row {i} statistics ill-conditioned, row skipped");
                    continue;
                }
                let a = w.columns(1, d).into_owned();
                let Ok(cof) = cofactor_row(&a, i) else {
                    log::warn!("speaker {speaker_id}: transform singular at row {i}, row skipped");
                    continue;
                };
                let mut p = DVector::zeros(d + 1);
                p.rows_mut(1, d).copy_from(&cof);
                let ginv_p = &g_inv * &p;
                let ginv_k = &g_inv * &stats.k[i];
                let e1 = p.dot(&ginv_p);
                let e2 = p.dot(&ginv_k);
                let beta = stats.beta;
                let disc = (e2 * e2 + 4.0 * e1 * beta).sqrt();
                let score = |alpha: f64| beta * (alpha * e1 + e2).abs().ln() - 0.5 * alpha * alpha * e1;
                let roots = [(-e2 + disc) / (2.0 * e1), (-e2 - disc) / (2.0 * e1)];
                let alpha = if score(roots[0]) >= score(roots[1]) { roots[0] } else { roots[1] };
                let row = ginv_p * alpha + ginv_k;
                w.set_row(i, &row.transpose());
            }
        }
        let after = auxiliary(&w, &stats);
        out.auxiliary.push((before, after));
        out.a = w.columns(1, d).into_owned();
        out.b = w.column(0).into_owned();
        out.log_likelihood.push(fmllr_objective(gmm, frames, &out.a, &out.b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;

    fn model() -> DiagonalGmm {
        DiagonalGmm::new(
            vec![0.3, 0.3, 0.4],
            vec![vec![0.0, 0.0, 0.0], vec![3.0, -1.0, 2.0], vec![-2.0, 2.0, 1.0]],
            vec![vec![1.0, 0.5, 0.8], vec![0.6, 1.0, 0.7], vec![0.9, 0.4, 1.2]],
        )
        .unwrap()
    }

    fn sample(gmm: &DiagonalGmm, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = KeyedRng::new(seed);
        (0..n)
            .map(|_| {
                let u = rng.uniform();
                let mut c = 0;
                let mut acc = gmm.weights[0];
                while u > acc && c + 1 < gmm.num_components() {
                    c += 1;
                    acc += gmm.weights[c];
                }
                (0..gmm.dim()).map(|j| gmm.means[c][j] + gmm.variances[c][j].sqrt() * rng.normal()).collect()
            })
            .collect()
    }

    #[test]
    fn inverts_a_shift() {
        let gmm = model();
        let delta = [0.7, -0.4, 1.1];
        let frames: Vec<Vec<f64>> =
            sample(&gmm, 5000, 3).into_iter().map(|x| x.iter().zip(&delta).map(|(a, b)| a + b).collect()).collect();
        let t = estimate_fmllr(&gmm, "spk", &frames, &FmllrOptions::default()).unwrap();
        for i in 0..3 {
            assert!((t.b[i] + delta[i]).abs() < 0.1, "b = {}", t.b);
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((t.a[(i, j)] - id).abs() < 0.1, "A = {}", t.a);
            }
        }
        for (before, after) in &t.auxiliary {
            assert!(after >= &(before - 1e-6 * before.abs()));
        }
        for w in t.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
        }
    }

    #[test]
    fn zero_iterations_and_short_speakers_get_identity() {
        let gmm = model();
        let frames = sample(&gmm, 100, 4);
        let t = estimate_fmllr(&gmm, "s", &frames, &FmllrOptions { iterations: 0, ..Default::default() }).unwrap();
        assert_eq!(t.a, DMatrix::identity(3, 3));
        let short = estimate_fmllr(&gmm, "s", &frames[..2], &FmllrOptions::default()).unwrap();
        assert_eq!(short.b, DVector::zeros(3));
    }

    #[test]
    fn matched_speaker_gains_little() {
        let gmm = model();
        let frames = sample(&gmm, 3000, 5);
        let t = estimate_fmllr(&gmm, "s", &frames, &FmllrOptions::default()).unwrap();
        let base = t.log_likelihood[0];
        let gain = t.log_likelihood.last().unwrap() - base;
        assert!(gain >= -1e-9);
        assert!(gain < 0.01 * base.abs(), "gain {gain} vs {base}");
    }
}
