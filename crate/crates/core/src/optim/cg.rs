//! Conjugate gradient on the damped quadratic model
//! `phi(d) = g.d + 1/2 d.(G + lambda I) d`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative per-iteration progress threshold.
pub const CG_TOLERANCE: f64 = 5e-4;

/// Relative change in `phi` treated as rounding noise.
pub const PHI_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgTermination {
    /// Residual vanished.
    Converged,
    /// Progress over the trailing window fell below the tolerance.
    Progress,
    MaxIterations,
}

impl CgTermination {
    pub fn as_str(&self) -> &'static str {
        match self {
            CgTermination::Converged => "converged",
            CgTermination::Progress => "progress",
            CgTermination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgTrace {
    /// `phi` after each iteration.
    pub phi: Vec<f64>,
    /// Residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// Residual vectors, when requested.
    pub residuals: Vec<Vec<f64>>,
    pub termination: CgTermination,
    /// 1-based iteration of the returned iterate.
    pub best_iteration: usize,
}

impl CgTrace {
    pub fn iterations(&self) -> usize {
        self.phi.len()
    }

    /// Whether `phi` never increased from one iteration to the next, up to
    /// a relative rounding allowance of [`PHI_ROUNDING`].
    pub fn is_monotone(&self) -> bool {
        self.increases().is_empty()
    }

    /// 1-based iterations where `phi` rose by more than rounding.
    pub fn increases(&self) -> Vec<usize> {
        self.phi
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] + PHI_ROUNDING * w[0].abs())
            .map(|(i, _)| i + 2)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CgOptions {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub store_residuals: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { lambda: 1.0, tolerance: CG_TOLERANCE, max_iters: 250, store_residuals: false }
    }
}

/// Linear operator seen by CG. `iteration` is 0-based; an operator that
/// changes with it (fresh dropout masks per CG iteration) breaks conjugacy.
pub trait CurvatureOperator {
    fn apply(&mut self, v: &[f64], iteration: usize) -> Result<Vec<f64>>;

    /// Whether `apply` ignores `iteration`.
    fn is_fixed(&self) -> bool {
        true
    }
}

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> CurvatureOperator for F {
    fn apply(&mut self, v: &[f64], _iteration: usize) -> Result<Vec<f64>> {
        self(v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trailing window length after `k` iterations.
pub fn progress_window(k: usize) -> usize {
    10.max((0.1 * k as f64).ceil() as usize)
}

/// Runs CG from `d = 0` and returns the iterate with the lowest `phi`.
///
/// Stops when the residual vanishes, at `max_iters`, or when the average
/// relative decrease of `phi` per iteration over the trailing window drops
/// below `tolerance` (0 disables this test). For an operator that is not
/// fixed, `phi` is measured against the iteration-0 operator so traces stay
/// comparable.
pub fn run_cg(gradient: &[f64], op: &mut dyn CurvatureOperator, opts: &CgOptions) -> Result<(Vec<f64>, CgTrace)> {
    let n = gradient.len();
    let lambda = opts.lambda;
    let fixed = op.is_fixed();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = gradient.iter().map(|g| -g).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let g_norm = rr.sqrt();
    let mut trace = CgTrace {
        phi: Vec::new(),
        residual_norms: vec![g_norm],
        residuals: Vec::new(),
        termination: CgTermination::MaxIterations,
        best_iteration: 0,
    };
    if opts.store_residuals {
        trace.residuals.push(r.clone());
    }
    let mut best = (0.0, d.clone());
    if g_norm == 0.0 {
        trace.termination = CgTermination::Converged;
        return Ok((d, trace));
    }
    for k in 0..opts.max_iters {
        let mut bp = op.apply(&p, k)?;
        for (b, pi) in bp.iter_mut().zip(&p) {
            *b += lambda * pi;
        }
        let pbp = dot(&p, &bp);
        if !pbp.is_finite() {
            return Err(Error::CgBreakdown(format!("non-finite curvature at iteration {}", k + 1)));
        }
        if pbp <= 0.0 {
            return Err(Error::CgBreakdown(format!("non-positive curvature {pbp:e} at iteration {}", k + 1)));
        }
        let alpha = rr / pbp;
        for i in 0..n {
            d[i] += alpha * p[i];
            r[i] -= alpha * bp[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::CgBreakdown(format!("non-finite residual at iteration {}", k + 1)));
        }
        let phi = if fixed {
            // with r = -g - B d: phi = 1/2 (g.d - r.d)
            0.5 * (dot(gradient, &d) - dot(&r, &d))
        } else {
            let mut bd = op.apply(&d, 0)?;
            for (b, di) in bd.iter_mut().zip(&d) {
                *b += lambda * di;
            }
            dot(gradient, &d) + 0.5 * dot(&d, &bd)
        };
        trace.phi.push(phi);
        trace.residual_norms.push(rr_new.sqrt());
        if opts.store_residuals {
            trace.residuals.push(r.clone());
        }
        if phi < best.0 || trace.best_iteration == 0 {
            best = (phi, d.clone());
            trace.best_iteration = k + 1;
        }
        let iters = k + 1;
        if rr_new.sqrt() <= 1e-14 * g_norm {
            trace.termination = CgTermination::Converged;
            break;
        }
        let w = progress_window(iters);
        if iters > w && phi < 0.0 {
            let earlier = trace.phi[iters - 1 - w];
            if (earlier - phi) / -phi < w as f64 * opts.tolerance {
                trace.termination = CgTermination::Progress;
                break;
            }
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok((best.1, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_operator_solves_in_one_step() {
        let g = vec![1.0, -2.0, 0.5];
        let mut op = |v: &[f64]| Ok(v.to_vec());
        let opts = CgOptions { lambda: 0.0, ..CgOptions::default() };
        let (d, trace) = run_cg(&g, &mut op, &opts).unwrap();
        assert_eq!(d, vec![-1.0, 2.0, -0.5]);
        assert_eq!(trace.iterations(), 1);
        assert_eq!(trace.termination, CgTermination::Converged);
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let mut op = |v: &[f64]| Ok(v.to_vec());
        let (d, trace) = run_cg(&[0.0, 0.0], &mut op, &CgOptions::default()).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
        assert_eq!(trace.iterations(), 0);
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let mut op = |v: &[f64]| Ok(v.iter().map(|x| -x).collect());
        let opts = CgOptions { lambda: 0.0, ..CgOptions::default() };
        assert!(matches!(run_cg(&[1.0], &mut op, &opts), Err(Error::CgBreakdown(_))));
    }

    #[test]
    fn window_grows_with_iterations() {
        assert_eq!(progress_window(1), 10);
        assert_eq!(progress_window(100), 10);
        assert_eq!(progress_window(101), 11);
    }
}
