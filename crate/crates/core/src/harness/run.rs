use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::config::{purpose_seed, ExperimentConfig, OptimizerConfig};
use super::corpus::{generate_corpus, Corpus};
use super::pipeline::{prepare_features, AdaptationSummary, PreparedData};
use crate::error::StageExt;
use crate::network::{BatchContext, Dataset, Network, ParameterVector};
use crate::optim::{hf_train, save_checkpoint, sgd_train, OptimizerState, TrainingLog, TrainingRecord};
use crate::par::Exec;
use crate::{Error, Result};

/// Header of `loss_series.csv`.
pub const LOSS_SERIES_HEADER: &str = "iteration,loss,heldout_loss,lambda,cg_iters";

/// Frame-level metrics of a network on one split, with dropout disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub frames: usize,
    pub frame_error: f64,
    pub cross_entropy: f64,
}

/// Evaluates `params` on the given utterances in test phase.
pub fn evaluate(net: &Network, params: &[f64], data: &Dataset, utts: &[usize], exec: Exec) -> Result<SplitMetrics> {
    if let Some(&i) = utts.iter().find(|&&i| data.utterances[i].labels.is_none()) {
        return Err(Error::Degenerate(format!("utterance {} has no labels", data.utterances[i].utterance_id)));
    }
    let frames = data.frames_of(utts.iter().copied());
    if frames.is_empty() {
        return Err(Error::Degenerate("evaluation split has no frames".into()));
    }
    let loss = net.batch_loss(params, data, &frames, &BatchContext::test(), exec)?;
    Ok(SplitMetrics { frames: loss.frames, frame_error: loss.error_rate(), cross_entropy: loss.mean_loss() })
}

/// Outcome of one experiment. Everything here is a deterministic function
/// of the config; timing is kept separately in [`RunOutcome`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config_name: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub seed: u64,
    pub optimizer: String,
    pub num_params: usize,
    /// Frame error on the configured evaluation split.
    pub frame_error: f64,
    pub eval_cross_entropy: f64,
    pub heldout_frame_error: f64,
    pub heldout_loss: f64,
    /// One record per optimizer iteration (HF iteration or SGD epoch).
    pub loss_series: Vec<TrainingRecord>,
    /// For each HF iteration, the CG iterations at which the quadratic
    /// model value rose.
    pub phi_increases: Vec<Vec<usize>>,
    pub adaptation: Option<AdaptationSummary>,
    pub params_checksum: String,
}

impl EvalReport {
    pub fn iterations(&self) -> usize {
        self.loss_series.len()
    }

    /// Number of CG runs whose quadratic model value ever rose.
    pub fn nonmonotone_traces(&self) -> usize {
        self.phi_increases.iter().filter(|v| !v.is_empty()).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_name: {}", self.config_name);
        let _ = writeln!(s, "config_hash: {}", self.config_hash);
        let _ = writeln!(s, "corpus_hash: {}", self.corpus_hash);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "optimizer: {}", self.optimizer);
        let _ = writeln!(s, "num_params: {}", self.num_params);
        let _ = writeln!(s, "iterations: {}", self.iterations());
        let _ = writeln!(s, "frame_error: {}", self.frame_error);
        let _ = writeln!(s, "eval_cross_entropy: {}", self.eval_cross_entropy);
        let _ = writeln!(s, "heldout_frame_error: {}", self.heldout_frame_error);
        let _ = writeln!(s, "heldout_loss: {}", self.heldout_loss);
        let increases: Vec<String> = self.phi_increases.iter().map(|v| v.len().to_string()).collect();
        let _ = writeln!(s, "cg_phi_increases: {}", increases.join(" "));
        if let Some(a) = &self.adaptation {
            let _ = writeln!(s, "stc_objective_nondecreasing: {}", a.stc_nondecreasing());
            let _ = writeln!(s, "fmllr_auxiliary_nondecreasing: {}", a.fmllr_nondecreasing());
        }
        let _ = writeln!(s, "params_checksum: {}", self.params_checksum);
        s
    }

    pub fn loss_series_csv(&self) -> String {
        let mut s = format!("{LOSS_SERIES_HEADER}\n");
        for r in &self.loss_series {
            let lambda = r.lambda.map_or(String::new(), |l| l.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.loss, r.heldout_loss, lambda, r.cg_iters);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub dir: PathBuf,
    pub wall_clock: Duration,
}

/// Directory of a run: `<root>/runs/<short hash>`.
pub fn run_dir(root: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    Ok(root.join("runs").join(config.short_hash()?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Trained {
    params: Vec<f64>,
    records: Vec<TrainingRecord>,
    phi_increases: Vec<Vec<usize>>,
    state: OptimizerState,
}

fn train(
    config: &ExperimentConfig,
    net: &Network,
    data: &PreparedData,
    log: &TrainingLog,
    exec: Exec,
) -> Result<Trained> {
    let init = net.init_params(purpose_seed(config.seed, "init")).values;
    let plan = config.dropout_plan();
    let ds = &data.dataset;
    match config.seeded_optimizer() {
        OptimizerConfig::Sgd(schedule) => {
            let r = sgd_train(net, init, ds, &data.train, &data.heldout, &schedule, &plan, exec, Some(log))?;
            let state = OptimizerState {
                kind: "sgd".into(),
                iteration: r.records.len(),
                lambda: None,
                learning_rate: r.rates.last().copied(),
                anneals: r.anneals,
                best_heldout: r.records.iter().map(|x| x.heldout_loss).reduce(f64::min),
            };
            Ok(Trained { params: r.params, records: r.records, phi_increases: Vec::new(), state })
        }
        OptimizerConfig::Hf(cfg) => {
            let r = hf_train(net, init, ds, &data.train, &data.heldout, &plan, &cfg, exec, Some(log))?;
            let state = OptimizerState {
                kind: "hf".into(),
                iteration: r.records.len(),
                lambda: Some(r.lambda),
                learning_rate: None,
                anneals: 0,
                best_heldout: r.records.iter().map(|x| x.heldout_loss).reduce(f64::min),
            };
            let phi_increases = r.traces.iter().map(|t| t.increases()).collect();
            Ok(Trained { params: r.params, records: r.records, phi_increases, state })
        }
    }
}

/// Runs the full pipeline and writes its artifacts under
/// `<root>/runs/<short hash>/`. When `corpus` is given it must have been
/// generated from `config.corpus`.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    corpus: Option<&Corpus>,
    root: &Path,
    exec: Exec,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let net = config.validate().stage("config")?;
    let config_hash = config.hash()?;
    let owned;
    let corpus = match corpus {
        Some(c) if c.spec == config.corpus => c,
        Some(_) => return Err(Error::config("corpus", "supplied corpus does not match the config")),
        None => {
            owned = generate_corpus(&config.corpus, exec).stage("corpus")?;
            &owned
        }
    };
    let data =
        prepare_features(corpus, &config.features, &config.adaptation, purpose_seed(config.seed, "adaptation"), exec)?;

    let dir = run_dir(root, config)?;
    std::fs::create_dir_all(&dir).stage("artifacts")?;
    std::fs::write(dir.join("config.resolved.toml"), config.to_toml()?).stage("artifacts")?;
    std::fs::write(dir.join("network.txt"), net.describe()).stage("artifacts")?;
    let log = TrainingLog::create(&dir.join("train.jsonl")).stage("artifacts")?;

    let trained = train(config, &net, &data, &log, exec).stage("training")?;

    let eval_utts = data.split(config.eval_split.split());
    let eval = evaluate(&net, &trained.params, &data.dataset, eval_utts, exec).stage("evaluation")?;
    let heldout = evaluate(&net, &trained.params, &data.dataset, &data.heldout, exec).stage("evaluation")?;
    let params = ParameterVector { layout: net.layout.clone(), values: trained.params };
    let report = EvalReport {
        config_name: config.name.clone(),
        config_hash,
        corpus_hash: corpus.hash.clone(),
        seed: config.seed,
        optimizer: config.optimizer.kind().to_string(),
        num_params: net.num_params(),
        frame_error: eval.frame_error,
        eval_cross_entropy: eval.cross_entropy,
        heldout_frame_error: heldout.frame_error,
        heldout_loss: heldout.cross_entropy,
        loss_series: trained.records,
        phi_increases: trained.phi_increases,
        adaptation: data.adaptation.clone(),
        params_checksum: params.checksum(),
    };

    write_artifacts(&dir, &report, &params, &trained.state).stage("artifacts")?;
    let wall_clock = start.elapsed();
    std::fs::write(dir.join("timing.log"), format!("wall_clock_seconds {:.3}\n", wall_clock.as_secs_f64()))
        .stage("artifacts")?;
    Ok(RunOutcome { report, dir, wall_clock })
}

pub fn run_experiment(config: &ExperimentConfig, root: &Path, exec: Exec) -> Result<RunOutcome> {
    run_experiment_with(config, None, root, exec)
}

fn write_artifacts(dir: &Path, report: &EvalReport, params: &ParameterVector, state: &OptimizerState) -> Result<()> {
    std::fs::write(dir.join("report.txt"), report.to_text())?;
    std::fs::write(dir.join("loss_series.csv"), report.loss_series_csv())?;
    if let Some(a) = &report.adaptation {
        std::fs::write(dir.join("adaptation.txt"), a.to_text())?;
    }
    save_checkpoint(dir, "final", params, state)?;
    let mut manifest = format!("config_hash {}\nseed {}\n", report.config_hash, report.seed);
    let mut files: Vec<String> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    for f in files.iter().filter(|f| *f != "manifest.txt" && *f != "timing.log") {
        let _ = writeln!(manifest, "{} {f}", sha256_hex(&std::fs::read(dir.join(f))?));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}
