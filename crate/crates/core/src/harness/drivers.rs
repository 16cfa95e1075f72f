use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{DropoutConfig, ExperimentConfig, NetworkConfig, OptimizerConfig, SweepOptions};
use super::corpus::generate_corpus;
use super::report::{emit_report, Comparison};
use super::run::{run_experiment_with, RunOutcome};
use crate::error::StageExt;
use crate::network::{ConvLayerSpec, LayerSpec, PoolAxis, PoolKind, PoolingSpec, WeightSharing};
use crate::optim::HfDropoutMode;
use crate::par::Exec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Input feature ablation: mel, +warp, +fMLLR chain, +deltas, +energy.
    Table1,
    /// Zero to three convolutional layers at a matched parameter count.
    Table2,
    /// Held-out loss of HF with fixed versus per-CG-iteration dropout masks.
    Figure1,
    /// Pooling variants: none, max, lp, stochastic, overlap, time pooling.
    PoolSweep,
    /// Limited versus full weight sharing.
    LwsVsFws,
}

impl Driver {
    pub const ALL: [Driver; 5] = [Driver::Table1, Driver::Table2, Driver::Figure1, Driver::PoolSweep, Driver::LwsVsFws];

    pub fn name(self) -> &'static str {
        match self {
            Driver::Table1 => "table1",
            Driver::Table2 => "table2",
            Driver::Figure1 => "figure1",
            Driver::PoolSweep => "poolsweep",
            Driver::LwsVsFws => "lws-vs-fws",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    /// Arm configs derived from `base`. Arm names are prefixed with their
    /// row number so sorting by name keeps the row order.
    pub fn arms(self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        base.validate()?;
        let arms = match self {
            Driver::Table1 => table1_arms(base),
            Driver::Table2 => table2_arms(base)?,
            Driver::Figure1 => figure1_arms(base)?,
            Driver::PoolSweep => pool_arms(base)?,
            Driver::LwsVsFws => sharing_arms(base),
        };
        for a in &arms {
            a.validate().map_err(|e| Error::config(a.name.clone(), e.to_string()))?;
        }
        Ok(arms)
    }
}

fn arm(base: &ExperimentConfig, suffix: &str) -> ExperimentConfig {
    ExperimentConfig { name: format!("{}-{suffix}", base.name), ..base.clone() }
}

fn table1_arms(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let steps = ["1-mel", "2-warp", "3-fmllr", "4-deltas", "5-energy"];
    steps
        .iter()
        .enumerate()
        .map(|(row, suffix)| {
            let mut a = arm(base, suffix);
            a.features.warp = row >= 1;
            a.features.adaptation = row >= 2;
            a.features.deltas = row >= 3;
            a.features.energy = row >= 4;
            a
        })
        .collect()
}

fn figure1_arms(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let OptimizerConfig::Hf(hf) = &base.optimizer else {
        return Err(Error::config("optimizer.kind", "figure1 compares HF dropout modes and needs `hf`"));
    };
    if !base.dropout_plan().is_active() {
        return Err(Error::config("dropout", "figure1 needs active dropout layers"));
    }
    Ok([("1-fixed", HfDropoutMode::FixedPerUtterance), ("2-per-cg", HfDropoutMode::PerCgIteration)]
        .into_iter()
        .map(|(suffix, mode)| {
            let mut a = arm(base, suffix);
            a.optimizer = OptimizerConfig::Hf(crate::optim::HfConfig { dropout_mode: mode, ..hf.clone() });
            a
        })
        .collect())
}

/// Network with `conv` convolutional layers followed by
/// `total_layers - conv` fully connected layers of `units` units.
pub fn topology(sweep: &SweepOptions, conv: usize, units: usize) -> NetworkConfig {
    let mut stream = Vec::new();
    for i in 0..conv {
        stream.push(LayerSpec::Conv(ConvLayerSpec::full(sweep.conv_maps[i], sweep.conv_filters[i])));
        stream.push(LayerSpec::relu());
        if i == 0 && sweep.pool_size > 1 {
            stream.push(LayerSpec::Pool(PoolingSpec::new(
                PoolKind::Max,
                sweep.pool_size,
                sweep.pool_size,
                PoolAxis::Frequency,
            )));
        }
    }
    let mut trunk = Vec::new();
    for _ in conv..sweep.total_layers {
        trunk.push(LayerSpec::Full { units });
        trunk.push(LayerSpec::relu());
    }
    NetworkConfig { streams: vec![stream], trunk }
}

fn param_count(cfg: &ExperimentConfig) -> Result<usize> {
    Ok(cfg.validate()?.num_params())
}

/// Sets every fully connected trunk width (`all`) or only the first one so
/// the parameter count is as close as possible to `target`, and checks the
/// mismatch against the sweep tolerance.
fn match_params(cfg: &mut ExperimentConfig, target: usize, all: bool) -> Result<()> {
    let full: Vec<usize> = cfg
        .network
        .trunk
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Full { .. }))
        .map(|(i, _)| i)
        .collect();
    let Some(&first) = full.first() else {
        return Ok(());
    };
    let targets: Vec<usize> = if all { full } else { vec![first] };
    let count_with = |cfg: &mut ExperimentConfig, u: usize| -> Result<usize> {
        for &i in &targets {
            cfg.network.trunk[i] = LayerSpec::Full { units: u };
        }
        param_count(cfg)
    };
    // The count grows monotonically with the width, so bisect on it.
    let (mut lo, mut hi) = (1usize, 1usize);
    while count_with(cfg, hi)? < target {
        lo = hi;
        hi *= 2;
        if hi > 1 << 20 {
            return Err(Error::config(format!("{}.sweep", cfg.name), "cannot reach the parameter budget"));
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count_with(cfg, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dist = |n: usize| n.abs_diff(target);
    let (n_lo, n_hi) = (count_with(cfg, lo)?, count_with(cfg, hi)?);
    let best = if dist(n_lo) < dist(n_hi) { lo } else { hi };
    let n = count_with(cfg, best)?;
    let mismatch = dist(n) as f64 / target as f64;
    if mismatch > cfg.sweep.param_tolerance {
        return Err(Error::config(
            format!("{}.sweep.param_tolerance", cfg.name),
            format!("closest parameter count {n} is {:.1}% away from {target}", 100.0 * mismatch),
        ));
    }
    Ok(())
}

fn table2_arms(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let sweep = &base.sweep;
    if sweep.total_layers < 4 {
        return Err(Error::config(
            "sweep.total_layers",
            "must be at least 4 so every arm keeps a fully connected layer",
        ));
    }
    let mut reference = arm(base, "reference");
    reference.network = topology(sweep, 2, sweep.units);
    reference.dropout = DropoutConfig::default();
    let target = param_count(&reference).stage("table2")?;
    (0..=3)
        .map(|conv| {
            let mut a = arm(base, &format!("{}-conv{conv}", conv + 1));
            a.network = topology(sweep, conv, sweep.units);
            a.dropout = DropoutConfig::default();
            match_params(&mut a, target, true)?;
            Ok(a)
        })
        .collect()
}

fn first_pool(network: &NetworkConfig) -> Option<(usize, usize)> {
    network
        .streams
        .iter()
        .enumerate()
        .find_map(|(s, layers)| layers.iter().position(|l| matches!(l, LayerSpec::Pool(_))).map(|i| (s, i)))
}

fn pool_arms(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let (s, i) = first_pool(&base.network)
        .ok_or_else(|| Error::config("network.streams", "the pooling sweep needs a pooling layer"))?;
    let LayerSpec::Pool(pool) = &base.network.streams[s][i] else { unreachable!() };
    let with_kind = |kind: PoolKind| PoolingSpec { kind, p_exponent: base.sweep.lp_exponent, ..pool.clone() };
    let time_pool = |kind: PoolKind| PoolingSpec {
        kind,
        p_exponent: base.sweep.lp_exponent,
        ..PoolingSpec::new(kind, 2, 1, PoolAxis::Time)
    };

    let mut reference = arm(base, "2-max");
    reference.network.streams[s][i] = LayerSpec::Pool(with_kind(PoolKind::Max));
    let target = param_count(&reference)?;

    let mut arms = Vec::new();
    let mut none = arm(base, "1-none");
    none.network.streams[s].remove(i);
    arms.push(none);
    for (suffix, kind) in [("2-max", PoolKind::Max), ("3-lp", PoolKind::Lp), ("4-stochastic", PoolKind::Stochastic)] {
        let mut a = arm(base, suffix);
        a.network.streams[s][i] = LayerSpec::Pool(with_kind(kind));
        arms.push(a);
    }
    let mut overlap = arm(base, "5-overlap");
    let size = pool.size.max(2);
    overlap.network.streams[s][i] = LayerSpec::Pool(PoolingSpec { size, stride: size - 1, ..with_kind(PoolKind::Max) });
    arms.push(overlap);
    for (suffix, kind) in
        [("6-time-max", PoolKind::Max), ("7-time-stochastic", PoolKind::Stochastic), ("8-time-lp", PoolKind::Lp)]
    {
        let mut a = arm(base, suffix);
        a.network.streams[s][i] = LayerSpec::Pool(with_kind(PoolKind::Max));
        a.network.streams[s].insert(i + 1, LayerSpec::Pool(time_pool(kind)));
        arms.push(a);
    }
    for a in &mut arms {
        match_params(a, target, false)?;
    }
    Ok(arms)
}

fn sharing_arms(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let variant = |suffix: &str, sharing: WeightSharing, widen: usize| {
        let mut a = arm(base, suffix);
        for l in a.network.streams.iter_mut().flatten() {
            if let LayerSpec::Conv(c) = l {
                c.sharing = sharing;
                c.bands.clear();
                c.feature_maps *= widen;
            }
        }
        a
    };
    vec![
        variant("1-fws", WeightSharing::Full, 1),
        variant("2-fws-wide", WeightSharing::Full, 2),
        variant("3-lws", WeightSharing::Limited, 1),
        variant("4-lws-wide", WeightSharing::Limited, 2),
    ]
}

#[derive(Debug, Clone)]
pub struct DriverOutcome {
    pub driver: Driver,
    pub arms: Vec<RunOutcome>,
    pub comparison: Comparison,
    /// Directory holding `table.txt`, the figure data and `arms.txt`.
    pub dir: PathBuf,
}

/// Runs every arm of `driver` on one shared corpus and writes the
/// comparison under `<root>/runs/<driver>-<base short hash>/`.
pub fn run_driver(driver: Driver, base: &ExperimentConfig, root: &Path, exec: Exec) -> Result<DriverOutcome> {
    let arms = driver.arms(base).stage("config")?;
    let corpus = generate_corpus(&base.corpus, exec).stage("corpus")?;
    let mut outcomes = Vec::with_capacity(arms.len());
    for a in &arms {
        log::info!("{}: running arm {}", driver.name(), a.name);
        outcomes.push(run_experiment_with(a, Some(&corpus), root, exec).map_err(|e| e.in_stage(&a.name))?);
    }
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let comparison = emit_report(&driver.name().replace('-', "_"), &reports).stage("report")?;
    let dir = root.join("runs").join(format!("{}-{}", driver.name(), base.short_hash()?));
    comparison.save(&dir).stage("report")?;
    let mut index = String::new();
    for o in &outcomes {
        let _ = writeln!(index, "{} {}", o.report.config_name, o.dir.display());
    }
    std::fs::write(dir.join("arms.txt"), index).stage("report")?;
    Ok(DriverOutcome { driver, arms: outcomes, comparison, dir })
}
