use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use acnn::adaptation::{
    estimate_fmllr, estimate_stc, train_diag_gmm, AdaptationChain, DiagonalGmm, FmllrOptions, FmllrTransform,
    GmmTrainOptions, StcOptions, StcTransform,
};
use acnn::features::{
    append_energy, frame_log_energy, read_features, write_features, NormStats, UtteranceFeatures, DELTA_WINDOW,
};
use acnn::harness::{
    evaluate, generate_corpus, prepare_features, purpose_seed, run_dir, run_driver, run_experiment, Corpus, Driver,
    ExperimentConfig, Split,
};
use acnn::network::Network;
use acnn::optim::load_checkpoint;
use acnn::par::Exec;
use acnn::{Error, Result};

use crate::Common;

trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: Into<Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}

/// Loads the config, applies the seed override and validates every
/// section. Nothing is written before this succeeds.
fn load(common: &Common) -> Result<(ExperimentConfig, Network)> {
    let mut config = ExperimentConfig::load(&common.config).stage("config")?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let net = config.validate().stage("config")?;
    Ok((config, net))
}

/// Creates `<root>/<verb>/<short hash>/` and writes the resolved config
/// snapshot into it.
fn output_dir(common: &Common, verb: &str, config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = common.output_root.join(verb).join(config.short_hash()?);
    snapshot(&dir, config)?;
    Ok(dir)
}

fn snapshot(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let text = config.to_toml()?;
    std::fs::create_dir_all(dir).stage("artifacts")?;
    std::fs::write(dir.join("config.resolved.toml"), &text).stage("artifacts")?;
    log::info!("resolved config {} ({}):\n{text}", config.name, config.short_hash()?);
    Ok(())
}

fn split_name(split: &Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Heldout => "heldout",
        Split::Test => "test",
    }
}

fn corpus(config: &ExperimentConfig) -> Result<Corpus> {
    generate_corpus(&config.corpus, Exec::default()).stage("corpus")
}

/// Log-mel statics per utterance with speaker and split, in corpus order.
fn statics(config: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<(Split, UtteranceFeatures)>> {
    corpus
        .utterances()
        .map(|(split, raw)| {
            let m = corpus.log_mel(raw, config.features.warp)?;
            let u = UtteranceFeatures::from_static(raw.id.clone(), corpus.speaker(raw).id.clone(), m)?
                .with_labels(raw.labels.clone())?;
            Ok((split, u))
        })
        .collect::<Result<_>>()
        .stage("features")
}

fn train_frames(utts: &[(Split, UtteranceFeatures)]) -> Vec<Vec<f64>> {
    utts.iter()
        .filter(|(s, _)| *s == Split::Train)
        .flat_map(|(_, u)| (0..u.num_frames()).map(move |t| u.frame(t).to_vec()))
        .collect()
}

const MANIFEST: &str = "manifest.txt";

/// `(utterance, speaker, split)` rows written by `features extract`.
fn read_manifest(dir: &Path) -> Result<Vec<(String, String, String)>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).stage("input")?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_whitespace().collect::<Vec<_>>()[..] {
            [u, s, p] => Ok((u.to_string(), s.to_string(), p.to_string())),
            _ => Err(Error::format(&path, format!("expected `utterance speaker split`, got `{l}`"))),
        })
        .collect::<Result<_>>()
        .stage("input")
}

fn feature_file(dir: &Path, utt: &str) -> PathBuf {
    dir.join(format!("{utt}.feat"))
}

pub fn features_extract(common: &Common) -> Result<()> {
    let (config, _) = load(common)?;
    let corpus = corpus(&config)?;
    let mut utts = statics(&config, &corpus)?;
    if config.features.deltas {
        for (_, u) in utts.iter_mut() {
            *u = u.recompute_deltas(DELTA_WINDOW).stage("features")?;
        }
    }
    if config.features.energy {
        for ((_, u), (_, raw)) in utts.iter_mut().zip(corpus.utterances()) {
            *u = append_energy(u, &frame_log_energy(&raw.spectrum)).stage("features")?;
        }
    }
    let dir = output_dir(common, "features", &config)?;
    let raw_dir = dir.join("raw");
    std::fs::create_dir_all(&raw_dir).stage("artifacts")?;
    let mut manifest = String::new();
    for (split, u) in &utts {
        write_features(&feature_file(&raw_dir, &u.utterance_id), u).stage("artifacts")?;
        let _ = writeln!(manifest, "{} {} {}", u.utterance_id, u.speaker_id, split_name(split));
    }
    std::fs::write(raw_dir.join(MANIFEST), manifest).stage("artifacts")?;
    println!("{} utterances written to {}", utts.len(), raw_dir.display());
    Ok(())
}

pub fn features_normalize(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let (config, _) = load(common)?;
    let default_dir = common.output_root.join("features").join(config.short_hash()?);
    let input = input.unwrap_or_else(|| default_dir.join("raw"));
    let manifest = read_manifest(&input)?;
    let utts: Vec<UtteranceFeatures> = manifest
        .iter()
        .map(|(u, _, _)| read_features(&feature_file(&input, u)))
        .collect::<Result<_>>()
        .stage("input")?;
    let train: Vec<UtteranceFeatures> =
        utts.iter().zip(&manifest).filter(|(_, m)| m.2 == "train").map(|(u, _)| u.clone()).collect();
    let stats = NormStats::estimate(&train, Exec::default()).stage("features")?;
    let dir = output_dir(common, "features", &config)?;
    let out = dir.join("normalized");
    std::fs::create_dir_all(&out).stage("artifacts")?;
    for u in &utts {
        write_features(&feature_file(&out, &u.utterance_id), &stats.apply(u).stage("features")?).stage("artifacts")?;
    }
    std::fs::copy(input.join(MANIFEST), out.join(MANIFEST)).stage("artifacts")?;
    stats.save(&dir.join("norm.txt")).stage("artifacts")?;
    println!("{} utterances normalized with {} training utterances into {}", utts.len(), train.len(), out.display());
    Ok(())
}

fn adapt_dir(common: &Common, config: &ExperimentConfig) -> Result<PathBuf> {
    Ok(common.output_root.join("adapt").join(config.short_hash()?))
}

pub fn adapt_train_gmm(common: &Common) -> Result<()> {
    let (config, _) = load(common)?;
    let corpus = corpus(&config)?;
    let frames = train_frames(&statics(&config, &corpus)?);
    let opts = GmmTrainOptions {
        components: config.adaptation.gmm_components,
        iterations: config.adaptation.gmm_iterations,
        seed: purpose_seed(config.seed, "gmm"),
        exec: Exec::default(),
    };
    let (gmm, trace) = train_diag_gmm(&frames, &opts).stage("gmm")?;
    let dir = output_dir(common, "adapt", &config)?;
    gmm.save(&dir.join("gmm.txt")).stage("artifacts")?;
    println!(
        "{} components on {} frames, log-likelihood {:?}, written to {}",
        gmm.num_components(),
        frames.len(),
        trace.log_likelihood.last(),
        dir.join("gmm.txt").display()
    );
    Ok(())
}

pub fn adapt_estimate_stc(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let (config, _) = load(common)?;
    let input = input.map_or_else(|| adapt_dir(common, &config), Ok)?;
    let gmm = DiagonalGmm::load(&input.join("gmm.txt")).stage("input")?;
    let corpus = corpus(&config)?;
    let frames = train_frames(&statics(&config, &corpus)?);
    let opts = StcOptions {
        outer_iterations: config.adaptation.stc_iterations,
        exec: Exec::default(),
        ..StcOptions::default()
    };
    let stc = estimate_stc(&gmm, &frames, &opts).stage("stc")?;
    let dir = output_dir(common, "adapt", &config)?;
    stc.save(&dir.join("stc.txt")).stage("artifacts")?;
    println!("STC objective {:?}, written to {}", stc.objective, dir.join("stc.txt").display());
    Ok(())
}

pub fn adapt_estimate_fmllr(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let (config, _) = load(common)?;
    let input = input.map_or_else(|| adapt_dir(common, &config), Ok)?;
    let stc = StcTransform::load(&input.join("stc.txt")).stage("input")?;
    let corpus = corpus(&config)?;
    let mut by_speaker: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (_, u) in statics(&config, &corpus)? {
        let frames = by_speaker.entry(u.speaker_id.clone()).or_default();
        frames.extend((0..u.num_frames()).map(|t| stc.apply(u.frame(t))));
    }
    let model = stc.transformed_gmm();
    let opts = FmllrOptions {
        iterations: config.adaptation.fmllr_iterations,
        exec: Exec::default(),
        ..FmllrOptions::default()
    };
    let mut transforms = Vec::new();
    for (spk, frames) in &by_speaker {
        transforms.push(estimate_fmllr(&model, spk, frames, &opts).stage("fmllr")?);
    }
    let dir = output_dir(common, "adapt", &config)?;
    let out = dir.join("fmllr");
    std::fs::create_dir_all(&out).stage("artifacts")?;
    for m in &transforms {
        m.save(&out.join(format!("{}.txt", m.speaker_id))).stage("artifacts")?;
        let gain = m.auxiliary.last().map_or(0.0, |&(b, a)| a - b);
        println!("{}: {} iterations, final auxiliary gain {gain:.6}", m.speaker_id, m.auxiliary.len());
    }
    println!("{} transforms written to {}", transforms.len(), out.display());
    Ok(())
}

pub fn adapt_apply(common: &Common, input: Option<PathBuf>, transforms: Option<PathBuf>) -> Result<()> {
    let (config, _) = load(common)?;
    let input = input.map_or_else(
        || Ok::<_, Error>(common.output_root.join("features").join(config.short_hash()?).join("raw")),
        Ok,
    )?;
    let transforms = transforms.map_or_else(|| adapt_dir(common, &config), Ok)?;
    let stc = StcTransform::load(&transforms.join("stc.txt")).stage("input")?;
    let mut speakers = BTreeMap::new();
    let fmllr_dir = transforms.join("fmllr");
    for entry in std::fs::read_dir(&fmllr_dir).stage("input")? {
        let m = FmllrTransform::load(&entry.stage("input")?.path()).stage("input")?;
        speakers.insert(m.speaker_id.clone(), m);
    }
    let chain = AdaptationChain { stc, speakers };
    let manifest = read_manifest(&input)?;
    let dir = output_dir(common, "adapt", &config)?;
    let out = dir.join("adapted");
    std::fs::create_dir_all(&out).stage("artifacts")?;
    for (utt, _, _) in &manifest {
        let u = read_features(&feature_file(&input, utt)).stage("input")?;
        write_features(&feature_file(&out, utt), &chain.adapt(&u).stage("adaptation")?).stage("artifacts")?;
    }
    std::fs::copy(input.join(MANIFEST), out.join(MANIFEST)).stage("artifacts")?;
    println!("{} utterances adapted into {}", manifest.len(), out.display());
    Ok(())
}

pub fn net_describe(common: &Common) -> Result<()> {
    let (config, net) = load(common)?;
    let text = net.describe();
    let dir = output_dir(common, "net", &config)?;
    std::fs::write(dir.join("network.txt"), &text).stage("artifacts")?;
    print!("{text}");
    Ok(())
}

pub fn train(common: &Common, kind: &str) -> Result<()> {
    let (config, _) = load(common)?;
    if config.optimizer.kind() != kind {
        return Err(Error::config(
            "optimizer.kind",
            format!("this verb trains with `{kind}` but the config selects `{}`", config.optimizer.kind()),
        )
        .in_stage("config"));
    }
    log::info!("resolved config {} ({}):\n{}", config.name, config.short_hash()?, config.to_toml()?);
    let outcome = run_experiment(&config, &common.output_root, Exec::default())?;
    print!("{}", outcome.report.to_text());
    println!("run directory: {}", outcome.dir.display());
    Ok(())
}

pub fn eval(common: &Common, run: Option<PathBuf>) -> Result<()> {
    let (config, net) = load(common)?;
    let run = run.map_or_else(|| run_dir(&common.output_root, &config), Ok)?;
    let (params, _) = load_checkpoint(&run, "final").stage("checkpoint")?;
    let corpus = corpus(&config)?;
    let data = prepare_features(
        &corpus,
        &config.features,
        &config.adaptation,
        purpose_seed(config.seed, "adaptation"),
        Exec::default(),
    )?;
    let split = config.eval_split.split();
    let m = evaluate(&net, &params.values, &data.dataset, data.split(split.clone()), Exec::default())
        .stage("evaluation")?;
    let text = format!(
        "split: {}\nframes: {}\nframe_error: {}\ncross_entropy: {}\n",
        split_name(&split),
        m.frames,
        m.frame_error,
        m.cross_entropy
    );
    let dir = output_dir(common, "eval", &config)?;
    std::fs::write(dir.join("eval.txt"), format!("run: {}\n{text}", run.display())).stage("artifacts")?;
    print!("{text}");
    Ok(())
}

pub fn experiment(common: &Common, driver: Driver) -> Result<()> {
    let (config, _) = load(common)?;
    driver.arms(&config).stage("config")?;
    let outcome = run_driver(driver, &config, &common.output_root, Exec::default())?;
    snapshot(&outcome.dir, &config)?;
    print!("{}", outcome.comparison.table);
    println!("results: {}", outcome.dir.display());
    for a in &outcome.arms {
        println!("{}: {}", a.report.config_name, a.dir.display());
    }
    Ok(())
}
