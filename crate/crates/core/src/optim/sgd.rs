//! Minibatch SGD on frame cross-entropy with held-out annealing.

use serde::{Deserialize, Serialize};

use super::log::{TrainingLog, TrainingRecord};
use crate::network::{BatchContext, Dataset, DropoutPlan, LayerSeeds, Network};
use crate::par::Exec;
use crate::rng::{hash_str, KeyedRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSchedule {
    pub initial_rate: f64,
    #[serde(default = "anneal_factor")]
    pub anneal_factor: f64,
    /// Minimum relative held-out improvement per epoch; less triggers an
    /// anneal.
    #[serde(default = "patience")]
    pub patience: f64,
    #[serde(default = "max_anneals")]
    pub max_anneals: usize,
    #[serde(default = "minibatch_size")]
    pub minibatch_size: usize,
    #[serde(default = "max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn anneal_factor() -> f64 {
    2.0
}
fn patience() -> f64 {
    1e-3
}
fn max_anneals() -> usize {
    5
}
fn minibatch_size() -> usize {
    64
}
fn max_epochs() -> usize {
    20
}

impl SgdSchedule {
    pub fn new(initial_rate: f64) -> Self {
        SgdSchedule {
            initial_rate,
            anneal_factor: anneal_factor(),
            patience: patience(),
            max_anneals: max_anneals(),
            minibatch_size: minibatch_size(),
            max_epochs: max_epochs(),
            seed: 0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.initial_rate > 0.0) {
            return Err(Error::config(format!("{path}.initial_rate"), "must be positive"));
        }
        if !(self.anneal_factor > 1.0) {
            return Err(Error::config(format!("{path}.anneal_factor"), "must exceed 1"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config(format!("{path}.minibatch_size"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxAnneals,
    MaxEpochs,
    /// Training loss became non-finite; the last good parameters are kept.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SgdResult {
    pub params: Vec<f64>,
    pub records: Vec<TrainingRecord>,
    /// Learning rate used in each epoch.
    pub rates: Vec<f64>,
    pub anneals: usize,
    pub stop: StopReason,
}

/// Trains with minibatch SGD. After every epoch the held-out loss is
/// measured; if it improved by less than `patience` (relative), the rate is
/// divided by `anneal_factor` and the best parameters so far are restored.
/// Training stops after `max_anneals` anneals or `max_epochs` epochs.
/// Dropout masks are redrawn for every presentation.
#[allow(clippy::too_many_arguments)]
pub fn sgd_train(
    net: &Network,
    mut params: Vec<f64>,
    data: &Dataset,
    train_utts: &[usize],
    heldout_utts: &[usize],
    schedule: &SgdSchedule,
    plan: &DropoutPlan,
    exec: Exec,
    log: Option<&TrainingLog>,
) -> Result<SgdResult> {
    schedule.validate("sgd")?;
    net.check_params(&params)?;
    let mut frames = data.frames_of(train_utts.iter().copied());
    if frames.is_empty() {
        return Err(Error::Degenerate("SGD needs at least one training frame".into()));
    }
    let heldout = data.frames_of(heldout_utts.iter().copied());
    let heldout_loss =
        |p: &[f64]| -> Result<f64> { Ok(net.batch_loss(p, data, &heldout, &BatchContext::test(), exec)?.mean_loss()) };
    let mut best_loss = heldout_loss(&params)?;
    let mut best = params.clone();
    let mut rate = schedule.initial_rate;
    let mut result = SgdResult {
        params: Vec::new(),
        records: Vec::new(),
        rates: Vec::new(),
        anneals: 0,
        stop: StopReason::MaxEpochs,
    };
    for epoch in 1..=schedule.max_epochs {
        KeyedRng::from_parts(&[schedule.seed, hash_str("sgd"), epoch as u64]).shuffle(&mut frames);
        let seeds: Vec<LayerSeeds> = if plan.is_active() {
            data.utterances.iter().map(|u| plan.utterance_seeds(&u.utterance_id, &[epoch as u64])).collect()
        } else {
            Vec::new()
        };
        let pool_seed = KeyedRng::from_parts(&[schedule.seed, hash_str("pool"), epoch as u64]).next_u64();
        let mut ctx = BatchContext::train(pool_seed);
        if plan.is_active() {
            ctx = ctx.with_masks(plan, &seeds);
        }
        let mut train_loss = 0.0;
        let mut diverged = false;
        for batch in frames.chunks(schedule.minibatch_size) {
            let (loss, grad) = net.batch_gradient(&params, data, batch, &ctx, exec)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            train_loss += loss;
            let step = rate / batch.len() as f64;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        result.rates.push(rate);
        if diverged {
            log::warn!("SGD diverged in epoch {epoch}; keeping the best parameters");
            params = best.clone();
            result.stop = StopReason::Diverged;
            break;
        }
        let current = heldout_loss(&params)?;
        let improved = current.is_finite() && best_loss - current >= schedule.patience * best_loss.abs();
        let record = TrainingRecord {
            iteration: epoch,
            loss: train_loss / frames.len() as f64,
            heldout_loss: current,
            lambda: None,
            learning_rate: Some(rate),
            cg_iters: 0,
            termination: if improved { "improved" } else { "annealed" }.to_string(),
            accepted: improved,
        };
        log::info!("sgd {epoch}: loss {:.6} heldout {current:.6} rate {rate:e}", record.loss);
        if let Some(l) = log {
            l.append(&record)?;
        }
        result.records.push(record);
        if improved {
            best_loss = current;
            best.clone_from(&params);
        } else {
            if !(current <= best_loss) {
                params.clone_from(&best);
            } else {
                best_loss = current;
                best.clone_from(&params);
            }
            rate /= schedule.anneal_factor;
            result.anneals += 1;
            if result.anneals >= schedule.max_anneals {
                result.stop = StopReason::MaxAnneals;
                break;
            }
        }
    }
    result.params = params;
    Ok(result)
}
