use nalgebra::{DMatrix, DVector};

use super::gmm::DiagonalGmm;
use super::{ROW_SWEEPS, VARIANCE_FLOOR_SCALE};
use crate::linalg::{cofactor_row, log_abs_det};
use crate::par::{self, Exec};
use crate::{Error, Result};

const CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct StcOptions {
    pub outer_iterations: usize,
    pub row_sweeps: usize,
    pub exec: Exec,
}

impl Default for StcOptions {
    fn default() -> Self {
        StcOptions { outer_iterations: 10, row_sweeps: ROW_SWEEPS, exec: Exec::default() }
    }
}

/// Semi-tied covariance transform with the per-component diagonal model it
/// was estimated jointly with.
#[derive(Debug, Clone, PartialEq)]
pub struct StcTransform {
    pub matrix: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// Component means in the transformed space.
    pub means: Vec<Vec<f64>>,
    /// Component variances in the transformed space.
    pub variances: Vec<Vec<f64>>,
    /// Fingerprint of the GMM the transform was estimated from.
    pub model_tag: u64,
    /// Auxiliary objective after initialization and after each outer iteration.
    pub objective: Vec<f64>,
}

impl StcTransform {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn identity(gmm: &DiagonalGmm) -> Self {
        StcTransform {
            matrix: DMatrix::identity(gmm.dim(), gmm.dim()),
            weights: gmm.weights.clone(),
            means: gmm.means.clone(),
            variances: gmm.variances.clone(),
            model_tag: gmm_fingerprint(gmm),
            objective: Vec::new(),
        }
    }

    /// The diagonal model in the transformed space, for fMLLR estimation.
    pub fn transformed_gmm(&self) -> DiagonalGmm {
        DiagonalGmm { weights: self.weights.clone(), means: self.means.clone(), variances: self.variances.clone() }
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        if self.matrix.determinant().abs() <= 1e-12 {
            return Err(Error::Singular("STC matrix".into()));
        }
        self.matrix.clone().try_inverse().ok_or_else(|| Error::Singular("STC matrix".into()))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn matches(&self, gmm: &DiagonalGmm) -> bool {
        self.model_tag == gmm_fingerprint(gmm)
    }
}

/// Hash of every parameter bit of a GMM.
pub fn gmm_fingerprint(gmm: &DiagonalGmm) -> u64 {
    let mut words = vec![gmm.num_components() as u64, gmm.dim() as u64];
    words.extend(gmm.weights.iter().map(|w| w.to_bits()));
    words.extend(gmm.means.iter().flatten().map(|w| w.to_bits()));
    words.extend(gmm.variances.iter().flatten().map(|w| w.to_bits()));
    crate::rng::derive_key(&words)
}

/// Per-component occupancies, means and scatter matrices under fixed
/// posteriors from `gmm`.
pub(crate) struct ComponentScatter {
    pub count: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub scatter: Vec<DMatrix<f64>>,
}

pub(crate) fn component_scatter(gmm: &DiagonalGmm, frames: &[Vec<f64>], exec: Exec) -> ComponentScatter {
    let (k, d) = (gmm.num_components(), gmm.dim());
    let stride = 1 + d + d * d;
    let parts = par::map_chunks(frames, CHUNK, exec, |_, chunk| {
        let mut acc = vec![0.0; k * stride];
        let mut post = vec![0.0; k];
        for x in chunk {
            gmm.posteriors(x, &mut post);
            for c in 0..k {
                let g = post[c];
                if g < 1e-12 {
                    continue;
                }
                let base = c * stride;
                acc[base] += g;
                for i in 0..d {
                    acc[base + 1 + i] += g * x[i];
                    let row = base + 1 + d + i * d;
                    let gx = g * x[i];
                    for j in 0..d {
                        acc[row + j] += gx * x[j];
                    }
                }
            }
        }
        acc
    });
    let total = par::pairwise_sum_vecs(parts).unwrap();
    let mut out = ComponentScatter { count: Vec::new(), means: Vec::new(), scatter: Vec::new() };
    for c in 0..k {
        let base = c * stride;
        let g = total[base];
        let mean = if g > 0.0 {
            DVector::from_iterator(d, (0..d).map(|i| total[base + 1 + i] / g))
        } else {
            DVector::from_column_slice(&gmm.means[c])
        };
        let mut scatter = DMatrix::from_row_slice(d, d, &total[base + 1 + d..base + stride]);
        // centered scatter: sum g (x - m)(x - m)^T = sum g x x^T - g m m^T
        scatter -= g * &mean * mean.transpose();
        out.count.push(g);
        out.means.push(mean);
        out.scatter.push(scatter);
    }
    out
}

/// Occupancy-weighted within-component covariance of `frames` after the map
/// `x -> s x`.
pub fn weighted_within_covariance(gmm: &DiagonalGmm, frames: &[Vec<f64>], s: &DMatrix<f64>) -> DMatrix<f64> {
    let stats = component_scatter(gmm, frames, Exec::default());
    let total: f64 = stats.count.iter().sum();
    let d = gmm.dim();
    let mut w = DMatrix::zeros(d, d);
    for sc in &stats.scatter {
        w += sc;
    }
    s * (w / total) * s.transpose()
}

fn objective(s: &DMatrix<f64>, variances: &[Vec<f64>], stats: &ComponentScatter) -> f64 {
    let beta: f64 = stats.count.iter().sum();
    let mut q = beta * log_abs_det(s);
    for (c, w) in stats.scatter.iter().enumerate() {
        for i in 0..s.nrows() {
            let row = s.row(i);
            let quad = (row * w * row.transpose())[(0, 0)];
            q -= 0.5 * (stats.count[c] * variances[c][i].ln() + quad / variances[c][i]);
        }
    }
    q
}

fn update_variances(s: &DMatrix<f64>, stats: &ComponentScatter, floor: &[f64]) -> Vec<Vec<f64>> {
    stats
        .scatter
        .iter()
        .zip(&stats.count)
        .map(|(w, &g)| {
            (0..s.nrows())
                .map(|i| {
                    let row = s.row(i);
                    let v = (row * w * row.transpose())[(0, 0)] / g.max(1e-10);
                    v.max(floor[i])
                })
                .collect()
        })
        .collect()
}

/// Estimates a semi-tied covariance transform.
///
/// Posteriors come from `gmm` and are held fixed. Each outer iteration
/// re-estimates the per-component diagonal variances given `S`, then updates
/// the rows of `S` in ascending order with the closed-form cofactor update,
/// `row_sweeps` times. Both steps maximize the auxiliary objective given the
/// other, so the objective is nondecreasing.
pub fn estimate_stc(gmm: &DiagonalGmm, frames: &[Vec<f64>], opts: &StcOptions) -> Result<StcTransform> {
    let d = gmm.dim();
    if frames.is_empty() || frames.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension(format!("STC needs non-empty {d}-dim frames")));
    }
    let stats = component_scatter(gmm, frames, opts.exec);
    let beta: f64 = stats.count.iter().sum();
    let mut global = DMatrix::zeros(d, d);
    for w in &stats.scatter {
        global += w;
    }
    global /= beta;

    let mut s = DMatrix::<f64>::identity(d, d);
    let floor_for = |s: &DMatrix<f64>| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let row = s.row(i);
                ((row * &global * row.transpose())[(0, 0)] * VARIANCE_FLOOR_SCALE).max(1e-12)
            })
            .collect()
    };
    let mut variances = update_variances(&s, &stats, &floor_for(&s));
    let mut trace = vec![objective(&s, &variances, &stats)];

    for _ in 0..opts.outer_iterations {
        variances = update_variances(&s, &stats, &floor_for(&s));
        for _ in 0..opts.row_sweeps {
            for i in 0..d {
                let mut g = DMatrix::zeros(d, d);
                for (c, w) in stats.scatter.iter().enumerate() {
                    g += w / variances[c][i];
                }
                let Some(g_inv) = g.try_inverse() else {
                    log::warn!("STC row {i}: singular statistics, row left unchanged");
                    continue;
                };
                let cof = match cofactor_row(&s, i) {
                    Ok(c) => c,
                    Err(_) => {
                        log::warn!("STC row {i}: singular transform, row left unchanged");
                        continue;
                    }
                };
                let cg = cof.transpose() * &g_inv;
                let denom = (&cg * &cof)[(0, 0)];
                if !(denom > 0.0) {
                    log::warn!("STC row {i}: non-positive cofactor norm, row left unchanged");
                    continue;
                }
                let new_row = cg * (beta / denom).sqrt();
                s.set_row(i, &new_row);
            }
        }
        trace.push(objective(&s, &variances, &stats));
    }
    // final variances for the transformed model
    let variances = update_variances(&s, &stats, &floor_for(&s));
    let means = stats.means.iter().map(|m| (&s * m).as_slice().to_vec()).collect();
    let weights = stats.count.iter().map(|g| g / beta).collect();
    Ok(StcTransform { matrix: s, weights, means, variances, model_tag: gmm_fingerprint(gmm), objective: trace })
}
