use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Split};
use crate::adaptation::{
    estimate_fmllr, estimate_stc, train_diag_gmm, AdaptationChain, FmllrOptions, GmmTrainOptions, StcOptions,
};
use crate::error::StageExt;
use crate::features::{append_energy, frame_log_energy, NormStats, UtteranceFeatures, DELTA_WINDOW};
use crate::network::Dataset;
use crate::par::Exec;
use crate::rng::{derive_key, hash_str};
use crate::{Error, Result};

/// Relative slack allowed when checking that an objective never decreases.
pub const OBJECTIVE_SLACK: f64 = 1e-9;

/// Which stages of the input representation are enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOptions {
    /// Warp the filterbank by each speaker's factor.
    #[serde(default)]
    pub warp: bool,
    /// Apply the STC + fMLLR chain in the correlated log-mel space.
    #[serde(default)]
    pub adaptation: bool,
    /// Append delta and double-delta channels.
    #[serde(default)]
    pub deltas: bool,
    /// Append log energy as a trailing frequency row.
    #[serde(default)]
    pub energy: bool,
    /// Frames of context on each side of the centre frame.
    #[serde(default = "context")]
    pub context: usize,
}

fn context() -> usize {
    4
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { warp: false, adaptation: false, deltas: false, energy: false, context: context() }
    }
}

impl FeatureOptions {
    pub fn channels(&self) -> usize {
        if self.deltas {
            3
        } else {
            1
        }
    }

    /// `[channels, frequency, time]` of one spliced example.
    pub fn input_shape(&self, spectral_dim: usize) -> [usize; 3] {
        [self.channels(), spectral_dim + usize::from(self.energy), 2 * self.context + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationOptions {
    #[serde(default = "components")]
    pub gmm_components: usize,
    #[serde(default = "ten")]
    pub gmm_iterations: usize,
    #[serde(default = "five")]
    pub stc_iterations: usize,
    #[serde(default = "five")]
    pub fmllr_iterations: usize,
    /// Speaker-adaptive rounds: each round re-estimates the GMM, STC and
    /// fMLLR transforms on the features adapted by the previous rounds.
    #[serde(default = "one")]
    pub rounds: usize,
}

fn components() -> usize {
    64
}
fn ten() -> usize {
    10
}
fn five() -> usize {
    5
}
fn one() -> usize {
    1
}

impl Default for AdaptationOptions {
    fn default() -> Self {
        AdaptationOptions {
            gmm_components: components(),
            gmm_iterations: ten(),
            stc_iterations: five(),
            fmllr_iterations: five(),
            rounds: one(),
        }
    }
}

impl AdaptationOptions {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.gmm_components == 0 {
            return Err(Error::config(format!("{path}.gmm_components"), "must be at least 1"));
        }
        if self.stc_iterations == 0 || self.fmllr_iterations == 0 {
            return Err(Error::config(format!("{path}.stc_iterations"), "STC and fMLLR need at least one iteration"));
        }
        if self.rounds == 0 {
            return Err(Error::config(format!("{path}.rounds"), "must be at least 1"));
        }
        Ok(())
    }
}

/// Objective traces of one adaptation round.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationRound {
    pub gmm_log_likelihood: Vec<f64>,
    pub stc_objective: Vec<f64>,
    /// Per speaker, `(before, after)` auxiliary values of each iteration.
    pub fmllr_auxiliary: BTreeMap<String, Vec<(f64, f64)>>,
}

fn not_below(prev: f64, next: f64) -> bool {
    next >= prev - OBJECTIVE_SLACK * prev.abs().max(1.0)
}

/// Objective traces of every adaptation round.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationSummary {
    pub rounds: Vec<AdaptationRound>,
}

impl AdaptationSummary {
    pub fn stc_nondecreasing(&self) -> bool {
        self.rounds.iter().all(|r| r.stc_objective.windows(2).all(|w| not_below(w[0], w[1])))
    }

    pub fn fmllr_nondecreasing(&self) -> bool {
        self.rounds
            .iter()
            .flat_map(|r| r.fmllr_auxiliary.values().flatten())
            .all(|&(before, after)| not_below(before, after))
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        for (i, r) in self.rounds.iter().enumerate() {
            s += &format!("round {}\n", i + 1);
            s += &format!("gmm_log_likelihood {}\n", join(&r.gmm_log_likelihood));
            s += &format!("stc_objective {}\n", join(&r.stc_objective));
            for (spk, aux) in &r.fmllr_auxiliary {
                let pairs: Vec<String> = aux.iter().map(|(b, a)| format!("{b}:{a}")).collect();
                s += &format!("fmllr {spk} {}\n", pairs.join(" "));
            }
        }
        s
    }
}

/// Features of every split in one dataset, with index lists per split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
    pub test: Vec<usize>,
    pub norm: NormStats,
    pub adaptation: Option<AdaptationSummary>,
}

impl PreparedData {
    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Heldout => &self.heldout,
            Split::Test => &self.test,
        }
    }
}

fn frames_of(utts: &[UtteranceFeatures]) -> Vec<Vec<f64>> {
    utts.iter().flat_map(|u| (0..u.num_frames()).map(move |t| u.frame(t).to_vec())).collect()
}

/// Estimates the adaptation chain. The GMM and STC use training frames
/// only; each speaker's fMLLR transform uses all of that speaker's frames
/// without labels.
fn estimate_chain(
    statics: &[UtteranceFeatures],
    train_count: usize,
    opts: &AdaptationOptions,
    seed: u64,
    exec: Exec,
) -> Result<(AdaptationChain, AdaptationRound)> {
    let train_frames = frames_of(&statics[..train_count]);
    let gmm_opts = GmmTrainOptions {
        components: opts.gmm_components,
        iterations: opts.gmm_iterations,
        seed: derive_key(&[seed, hash_str("gmm")]),
        exec,
    };
    let (gmm, gmm_trace) = train_diag_gmm(&train_frames, &gmm_opts)?;
    let stc_opts = StcOptions { outer_iterations: opts.stc_iterations, exec, ..StcOptions::default() };
    let stc = estimate_stc(&gmm, &train_frames, &stc_opts)?;
    let model = stc.transformed_gmm();
    let mut by_speaker: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for u in statics {
        let frames = by_speaker.entry(u.speaker_id.as_str()).or_default();
        frames.extend((0..u.num_frames()).map(|t| stc.apply(u.frame(t))));
    }
    let fmllr_opts = FmllrOptions { iterations: opts.fmllr_iterations, exec, ..FmllrOptions::default() };
    let mut speakers = BTreeMap::new();
    let mut fmllr_auxiliary = BTreeMap::new();
    for (spk, frames) in by_speaker {
        let m = estimate_fmllr(&model, spk, &frames, &fmllr_opts)?;
        fmllr_auxiliary.insert(spk.to_string(), m.auxiliary.clone());
        speakers.insert(spk.to_string(), m);
    }
    let summary = AdaptationRound {
        gmm_log_likelihood: gmm_trace.log_likelihood,
        stc_objective: stc.objective.clone(),
        fmllr_auxiliary,
    };
    Ok((AdaptationChain { stc, speakers }, summary))
}

/// Runs the feature pipeline: log-mel (optionally warped), adaptation,
/// deltas, energy, then global normalization with statistics from the
/// training split. `seed` keys the GMM initialization.
pub fn prepare_features(
    corpus: &Corpus,
    opts: &FeatureOptions,
    adaptation: &AdaptationOptions,
    seed: u64,
    exec: Exec,
) -> Result<PreparedData> {
    let mut statics = Vec::new();
    let mut splits = Vec::new();
    for (split, raw) in corpus.utterances() {
        let m = corpus.log_mel(raw, opts.warp).stage("features")?;
        let spk = &corpus.speaker(raw).id;
        statics.push(UtteranceFeatures::from_static(raw.id.clone(), spk.clone(), m)?.with_labels(raw.labels.clone())?);
        splits.push(split);
    }
    let train_count = corpus.train.len();

    let mut summary = None;
    let mut utts = statics;
    if opts.adaptation {
        let mut rounds = Vec::with_capacity(adaptation.rounds);
        for r in 0..adaptation.rounds {
            let round_seed = derive_key(&[seed, r as u64]);
            let (chain, s) = estimate_chain(&utts, train_count, adaptation, round_seed, exec).stage("adaptation")?;
            rounds.push(s);
            utts = utts.iter().map(|u| chain.adapt(u)).collect::<Result<Vec<_>>>().stage("adaptation")?;
        }
        summary = Some(AdaptationSummary { rounds });
    }

    if opts.deltas {
        utts = utts.iter().map(|u| u.recompute_deltas(DELTA_WINDOW)).collect::<Result<_>>().stage("features")?;
    }
    if opts.energy {
        utts = utts
            .iter()
            .zip(corpus.utterances())
            .map(|(u, (_, raw))| append_energy(u, &frame_log_energy(&raw.spectrum)))
            .collect::<Result<_>>()
            .stage("features")?;
    }
    let norm = NormStats::estimate(&utts[..train_count], exec).stage("features")?;
    let utts = utts.iter().map(|u| norm.apply(u)).collect::<Result<Vec<_>>>().stage("features")?;

    let mut data = PreparedData {
        dataset: Dataset::new(utts, opts.context).stage("features")?,
        train: Vec::new(),
        heldout: Vec::new(),
        test: Vec::new(),
        norm,
        adaptation: summary,
    };
    for (i, split) in splits.into_iter().enumerate() {
        match split {
            Split::Train => data.train.push(i),
            Split::Heldout => data.heldout.push(i),
            Split::Test => data.test.push(i),
        }
    }
    Ok(data)
}
