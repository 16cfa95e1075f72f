//! Hessian-free optimization with Levenberg-Marquardt damping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cg::{run_cg, CgOptions, CgTrace, CurvatureOperator, CG_TOLERANCE};
use super::log::{TrainingLog, TrainingRecord};
use super::seeds::{assign_dropout_seeds, SeedRegistry};
use crate::network::{BatchContext, Dataset, DropoutPlan, FrameRef, LayerSeeds, Network};
use crate::par::Exec;
use crate::rng::{derive_key, hash_str, KeyedRng};
use crate::{Error, Result};

pub const LAMBDA_INIT: f64 = 1.0;
pub const CURVATURE_FRACTION: f64 = 0.25;

/// Levenberg-Marquardt rule: grow by 3/2 below `rho = 0.25`, shrink by 2/3
/// above `rho = 0.75`.
pub fn update_lambda(lambda: f64, rho: f64) -> f64 {
    if rho < 0.25 {
        lambda * 1.5
    } else if rho > 0.75 {
        lambda * (2.0 / 3.0)
    } else {
        lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HfDropoutMode {
    None,
    /// One mask per utterance and layer for the whole HF iteration.
    FixedPerUtterance,
    /// Fresh masks for every CG iteration.
    PerCgIteration,
}

/// An objective HF can minimize. Implementations hold whatever per-iteration
/// state (masks, curvature batch) they need.
pub trait HfProblem {
    fn dim(&self) -> usize;

    /// Called once before each HF iteration's gradient.
    fn begin_iteration(&mut self, _hf_iteration: usize) -> Result<()> {
        Ok(())
    }

    fn loss_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn loss(&mut self, theta: &[f64]) -> Result<f64>;

    /// Undamped curvature product for CG iteration `cg_iteration`.
    fn curvature(&mut self, theta: &[f64], v: &[f64], cg_iteration: usize) -> Result<Vec<f64>>;

    fn curvature_is_fixed(&self) -> bool {
        true
    }
}

struct ProblemOperator<'a, P: HfProblem + ?Sized> {
    problem: &'a mut P,
    theta: &'a [f64],
}

impl<P: HfProblem + ?Sized> CurvatureOperator for ProblemOperator<'_, P> {
    fn apply(&mut self, v: &[f64], iteration: usize) -> Result<Vec<f64>> {
        self.problem.curvature(self.theta, v, iteration)
    }

    fn is_fixed(&self) -> bool {
        self.problem.curvature_is_fixed()
    }
}

#[derive(Debug, Clone)]
pub struct HfStepOptions {
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    /// CG restarts with a larger damping after a breakdown.
    pub max_restarts: usize,
}

impl Default for HfStepOptions {
    fn default() -> Self {
        HfStepOptions { cg_tolerance: CG_TOLERANCE, cg_max_iters: 250, max_restarts: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct HfStep {
    pub accepted: bool,
    pub loss_before: f64,
    /// Loss at the candidate point.
    pub loss_candidate: f64,
    pub rho: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub direction: Vec<f64>,
    pub trace: CgTrace,
}

impl HfStep {
    /// Loss at the point kept after the acceptance decision.
    pub fn loss_after(&self) -> f64 {
        if self.accepted {
            self.loss_candidate
        } else {
            self.loss_before
        }
    }
}

/// One HF iteration: gradient, CG on the damped quadratic model, reduction
/// ratio test, damping update, and acceptance. Rejected steps leave `theta`
/// unchanged and keep the damping increase.
pub fn hf_step<P: HfProblem + ?Sized>(
    problem: &mut P,
    theta: &mut Vec<f64>,
    lambda: &mut f64,
    hf_iteration: usize,
    opts: &HfStepOptions,
) -> Result<HfStep> {
    problem.begin_iteration(hf_iteration)?;
    let (loss_before, grad) = problem.loss_and_gradient(theta)?;
    let lambda_before = *lambda;
    let mut restarts = 0;
    let (d, trace) = loop {
        let cg = CgOptions {
            lambda: *lambda,
            tolerance: opts.cg_tolerance,
            max_iters: opts.cg_max_iters,
            store_residuals: false,
        };
        let mut op = ProblemOperator { problem: &mut *problem, theta };
        match run_cg(&grad, &mut op, &cg) {
            Ok(r) => break r,
            Err(Error::CgBreakdown(msg)) if restarts < opts.max_restarts => {
                log::warn!("HF iteration {hf_iteration}: {msg}; raising damping and restarting CG");
                restarts += 1;
                *lambda = if *lambda > 0.0 { *lambda * 1.5 } else { LAMBDA_INIT };
            }
            Err(e) => return Err(e),
        }
    };
    let phi = trace.phi.get(trace.best_iteration.wrapping_sub(1)).copied().unwrap_or(0.0);
    let d_norm2: f64 = d.iter().map(|x| x * x).sum();
    // reduction predicted by the undamped model
    let predicted = phi - 0.5 * *lambda * d_norm2;
    let candidate: Vec<f64> = theta.iter().zip(&d).map(|(t, s)| t + s).collect();
    let loss_candidate = problem.loss(&candidate)?;
    let actual = loss_candidate - loss_before;
    let rho = if predicted < 0.0 { actual / predicted } else { 0.0 };
    let accepted = loss_candidate.is_finite() && actual <= 0.0 && d_norm2 > 0.0;
    *lambda = update_lambda(*lambda, if loss_candidate.is_finite() { rho } else { f64::NEG_INFINITY });
    if accepted {
        *theta = candidate;
    }
    Ok(HfStep { accepted, loss_before, loss_candidate, rho, lambda_before, lambda_after: *lambda, direction: d, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HfConfig {
    pub iterations: usize,
    #[serde(default = "lambda_init")]
    pub lambda_init: f64,
    #[serde(default = "curvature_fraction")]
    pub curvature_fraction: f64,
    #[serde(default = "cg_tolerance")]
    pub cg_tolerance: f64,
    #[serde(default = "cg_max_iters")]
    pub cg_max_iters: usize,
    pub dropout_mode: HfDropoutMode,
    #[serde(default)]
    pub master_seed: u64,
}

fn lambda_init() -> f64 {
    LAMBDA_INIT
}
fn curvature_fraction() -> f64 {
    CURVATURE_FRACTION
}
fn cg_tolerance() -> f64 {
    CG_TOLERANCE
}
fn cg_max_iters() -> usize {
    250
}

impl HfConfig {
    pub fn new(iterations: usize, dropout_mode: HfDropoutMode, master_seed: u64) -> Self {
        HfConfig {
            iterations,
            lambda_init: LAMBDA_INIT,
            curvature_fraction: CURVATURE_FRACTION,
            cg_tolerance: CG_TOLERANCE,
            cg_max_iters: 250,
            dropout_mode,
            master_seed,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.lambda_init >= 0.0) {
            return Err(Error::config(format!("{path}.lambda_init"), "must be non-negative"));
        }
        if !(self.curvature_fraction > 0.0 && self.curvature_fraction <= 1.0) {
            return Err(Error::config(format!("{path}.curvature_fraction"), "must lie in (0, 1]"));
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(Error::config(format!("{path}.cg_tolerance"), "must be positive"));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::config(format!("{path}.cg_max_iters"), "must be at least 1"));
        }
        Ok(())
    }
}

/// Frame-averaged cross-entropy of a network on a training subset, with
/// dropout masks and a curvature batch managed per HF iteration.
pub struct NetworkHfProblem<'a> {
    pub net: &'a Network,
    pub data: &'a Dataset,
    pub plan: &'a DropoutPlan,
    pub mode: HfDropoutMode,
    pub master_seed: u64,
    pub curvature_fraction: f64,
    pub exec: Exec,
    train_utts: Vec<usize>,
    train_frames: Vec<FrameRef>,
    pub registry: SeedRegistry,
    hf_iteration: usize,
    gradient_seeds: Vec<LayerSeeds>,
    cg_seeds: BTreeMap<usize, Vec<LayerSeeds>>,
    curvature_frames: Vec<FrameRef>,
    pool_seed: u64,
}

impl<'a> NetworkHfProblem<'a> {
    pub fn new(
        net: &'a Network,
        data: &'a Dataset,
        train_utts: Vec<usize>,
        plan: &'a DropoutPlan,
        cfg: &HfConfig,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate("hf")?;
        if train_utts.is_empty() {
            return Err(Error::Degenerate("HF needs at least one training utterance".into()));
        }
        let mode = if plan.is_active() { cfg.dropout_mode } else { HfDropoutMode::None };
        let train_frames = data.frames_of(train_utts.iter().copied());
        Ok(NetworkHfProblem {
            net,
            data,
            plan,
            mode,
            master_seed: cfg.master_seed,
            curvature_fraction: cfg.curvature_fraction,
            exec,
            train_utts,
            train_frames,
            registry: SeedRegistry::new(),
            hf_iteration: 0,
            gradient_seeds: Vec::new(),
            cg_seeds: BTreeMap::new(),
            curvature_frames: Vec::new(),
            pool_seed: 0,
        })
    }

    pub fn curvature_frames(&self) -> &[FrameRef] {
        &self.curvature_frames
    }

    pub fn gradient_seeds(&self) -> &[LayerSeeds] {
        &self.gradient_seeds
    }

    fn context<'s>(&'s self, seeds: Option<&'s [LayerSeeds]>) -> BatchContext<'s> {
        let ctx = BatchContext::train(self.pool_seed);
        match (self.mode, seeds) {
            (HfDropoutMode::None, _) | (_, None) => ctx,
            (_, Some(s)) => ctx.with_masks(self.plan, s),
        }
    }

    fn seeds_for_cg(&mut self, cg_iteration: usize) -> &[LayerSeeds] {
        if self.mode != HfDropoutMode::PerCgIteration || cg_iteration == 0 {
            return &self.gradient_seeds;
        }
        let (plan, data, it) = (self.plan, self.data, self.hf_iteration as u64);
        self.cg_seeds.entry(cg_iteration).or_insert_with(|| {
            data.utterances.iter().map(|u| plan.utterance_seeds(&u.utterance_id, &[it, cg_iteration as u64])).collect()
        })
    }

    /// Mean cross-entropy on `frames` with this iteration's masks.
    pub fn mean_loss(&self, theta: &[f64], frames: &[FrameRef]) -> Result<f64> {
        let ctx = self.context(Some(&self.gradient_seeds));
        Ok(self.net.batch_loss(theta, self.data, frames, &ctx, self.exec)?.mean_loss())
    }
}

impl HfProblem for NetworkHfProblem<'_> {
    fn dim(&self) -> usize {
        self.net.num_params()
    }

    fn begin_iteration(&mut self, hf_iteration: usize) -> Result<()> {
        self.hf_iteration = hf_iteration;
        self.registry.prune_before(hf_iteration);
        self.cg_seeds.clear();
        self.gradient_seeds = if self.mode == HfDropoutMode::None {
            Vec::new()
        } else {
            let ids: Vec<&str> = self.data.utterances.iter().map(|u| u.utterance_id.as_str()).collect();
            assign_dropout_seeds(&mut self.registry, &ids, self.plan, hf_iteration)?;
            self.registry.seeds_for(hf_iteration, &ids)?
        };
        let mut utts = self.train_utts.clone();
        KeyedRng::from_parts(&[self.master_seed, hash_str("curvature"), hf_iteration as u64]).shuffle(&mut utts);
        let take = ((utts.len() as f64 * self.curvature_fraction).ceil() as usize).clamp(1, utts.len());
        utts.truncate(take);
        utts.sort_unstable();
        self.curvature_frames = self.data.frames_of(utts);
        self.pool_seed = derive_key(&[self.master_seed, hash_str("pool"), hf_iteration as u64]);
        Ok(())
    }

    fn loss_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ctx = self.context(Some(&self.gradient_seeds));
        let n = self.train_frames.len() as f64;
        let (loss, mut grad) = self.net.batch_gradient(theta, self.data, &self.train_frames, &ctx, self.exec)?;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    fn loss(&mut self, theta: &[f64]) -> Result<f64> {
        self.mean_loss(theta, &self.train_frames)
    }

    fn curvature(&mut self, theta: &[f64], v: &[f64], cg_iteration: usize) -> Result<Vec<f64>> {
        let fixed = self.mode == HfDropoutMode::FixedPerUtterance;
        let seeds = self.seeds_for_cg(cg_iteration).to_vec();
        let ctx = self.context(Some(&seeds));
        let bound = fixed.then_some(self.gradient_seeds.as_slice());
        let n = self.curvature_frames.len() as f64;
        let mut gv =
            self.net.batch_gauss_newton(theta, v, self.data, &self.curvature_frames, &ctx, bound, self.exec)?;
        gv.iter_mut().for_each(|g| *g /= n);
        Ok(gv)
    }

    fn curvature_is_fixed(&self) -> bool {
        self.mode != HfDropoutMode::PerCgIteration
    }
}

#[derive(Debug, Clone)]
pub struct HfResult {
    pub params: Vec<f64>,
    pub records: Vec<TrainingRecord>,
    pub traces: Vec<CgTrace>,
    pub lambda: f64,
}

/// Runs `cfg.iterations` HF iterations, measuring held-out loss without
/// dropout after each.
#[allow(clippy::too_many_arguments)]
pub fn hf_train(
    net: &Network,
    mut params: Vec<f64>,
    data: &Dataset,
    train_utts: &[usize],
    heldout_utts: &[usize],
    plan: &DropoutPlan,
    cfg: &HfConfig,
    exec: Exec,
    log: Option<&TrainingLog>,
) -> Result<HfResult> {
    let mut problem = NetworkHfProblem::new(net, data, train_utts.to_vec(), plan, cfg, exec)?;
    let heldout = data.frames_of(heldout_utts.iter().copied());
    let opts = HfStepOptions { cg_tolerance: cfg.cg_tolerance, cg_max_iters: cfg.cg_max_iters, max_restarts: 1 };
    let mut lambda = cfg.lambda_init;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut traces = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let step = hf_step(&mut problem, &mut params, &mut lambda, it, &opts)?;
        let heldout_loss = net.batch_loss(&params, data, &heldout, &BatchContext::test(), exec)?.mean_loss();
        if !heldout_loss.is_finite() {
            return Err(Error::Diverged(format!("held-out loss {heldout_loss} after HF iteration {it}")));
        }
        let record = TrainingRecord {
            iteration: it,
            loss: step.loss_after(),
            heldout_loss,
            lambda: Some(lambda),
            learning_rate: None,
            cg_iters: step.trace.iterations(),
            termination: step.trace.termination.as_str().to_string(),
            accepted: step.accepted,
        };
        log::info!(
            "hf {it}: loss {:.6} heldout {:.6} lambda {:.4} cg {} rho {:.3}{}",
            record.loss,
            heldout_loss,
            lambda,
            record.cg_iters,
            step.rho,
            if step.accepted { "" } else { " (rejected)" }
        );
        if let Some(l) = log {
            l.append(&record)?;
        }
        records.push(record);
        traces.push(step.trace);
    }
    Ok(HfResult { params, records, traces, lambda })
}
