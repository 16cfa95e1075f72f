use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{mel_filterbank, FilterbankConfig, FrameMatrix};
use crate::par::{self, Exec};
use crate::rng::{hash_str, KeyedRng};
use crate::{Error, Result};

/// Sample rate of the synthetic spectra.
pub const CORPUS_SAMPLE_RATE: f64 = 8_000.0;

/// Frequency range covered by the filterbank.
pub const CORPUS_FREQ_RANGE: [f64; 2] = [64.0, 3_800.0];

/// Formant-like peaks per class template.
const PEAKS_PER_CLASS: usize = 3;

/// Upper bound on the condition number of a speaker distortion.
pub const MAX_CONDITION: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Total speakers, including the test speakers.
    pub num_speakers: usize,
    /// Speakers reserved for the test split. They never appear in training.
    #[serde(default = "test_speakers")]
    pub test_speakers: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    pub num_classes: usize,
    /// Number of log-mel dimensions.
    pub spectral_dim: usize,
    /// Power spectrum bins from 0 Hz to Nyquist.
    #[serde(default = "fft_bins")]
    pub fft_bins: usize,
    /// Scale of the class template peaks, in log-power units.
    #[serde(default = "one")]
    pub separation: f64,
    /// Standard deviation of per-bin log-power noise.
    #[serde(default = "noise")]
    pub noise: f64,
    /// Standard deviation of the per-segment log gain.
    #[serde(default = "gain")]
    pub gain_std: f64,
    /// Speaker warp factors are drawn from `1 ± warp_range`.
    #[serde(default = "warp_range")]
    pub warp_range: f64,
    /// Enables the per-speaker affine log-mel distortion.
    #[serde(default = "yes")]
    pub distortion: bool,
    /// Condition number bound of each distortion matrix.
    #[serde(default = "condition")]
    pub condition: f64,
    /// Strength of the rotations mixing neighbouring dimensions.
    #[serde(default = "rotation")]
    pub rotation: f64,
    /// Standard deviation of the distortion offset.
    #[serde(default = "offset_scale")]
    pub offset_scale: f64,
    /// Inclusive range of class segment lengths in frames.
    #[serde(default = "segment_frames")]
    pub segment_frames: [usize; 2],
    /// Fraction of each training speaker's utterances held out.
    #[serde(default = "heldout_fraction")]
    pub heldout_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
}

fn test_speakers() -> usize {
    4
}
fn fft_bins() -> usize {
    129
}
fn one() -> f64 {
    1.0
}
fn noise() -> f64 {
    1.5
}
fn gain() -> f64 {
    0.3
}
fn warp_range() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}
fn condition() -> f64 {
    1.5
}
fn rotation() -> f64 {
    0.05
}
fn offset_scale() -> f64 {
    0.5
}
fn segment_frames() -> [usize; 2] {
    [5, 20]
}
fn heldout_fraction() -> f64 {
    0.1
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_speakers: 20,
            test_speakers: test_speakers(),
            utterances_per_speaker: 10,
            frames_per_utterance: 200,
            num_classes: 10,
            spectral_dim: 40,
            fft_bins: fft_bins(),
            separation: 1.0,
            noise: noise(),
            gain_std: gain(),
            warp_range: warp_range(),
            distortion: true,
            condition: condition(),
            rotation: rotation(),
            offset_scale: offset_scale(),
            segment_frames: segment_frames(),
            heldout_fraction: heldout_fraction(),
            master_seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        let err = |field: &str, msg: &str| Err(Error::config(format!("{path}.{field}"), msg));
        if self.num_classes < 2 {
            return err("num_classes", "need at least two classes");
        }
        if self.num_speakers == 0 {
            return err("num_speakers", "must be at least 1");
        }
        if self.test_speakers >= self.num_speakers {
            return err("test_speakers", "must leave at least one training speaker");
        }
        if self.utterances_per_speaker == 0 {
            return err("utterances_per_speaker", "must be at least 1");
        }
        if self.frames_per_utterance == 0 {
            return err("frames_per_utterance", "must be at least 1");
        }
        if self.spectral_dim == 0 {
            return err("spectral_dim", "must be at least 1");
        }
        if self.fft_bins < 2 {
            return err("fft_bins", "must be at least 2");
        }
        for (field, v) in [
            ("separation", self.separation),
            ("noise", self.noise),
            ("gain_std", self.gain_std),
            ("rotation", self.rotation),
            ("offset_scale", self.offset_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(field, "must be finite and non-negative");
            }
        }
        if !(0.0..=0.2).contains(&self.warp_range) {
            return err("warp_range", "must lie in [0, 0.2]");
        }
        if !(1.0..=MAX_CONDITION).contains(&self.condition) {
            return err("condition", "must lie in [1, 10]");
        }
        let [lo, hi] = self.segment_frames;
        if lo == 0 || lo > hi {
            return err("segment_frames", "need 1 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return err("heldout_fraction", "must lie in [0, 1)");
        }
        self.filterbank().validate().map_err(|e| Error::config(format!("{path}.spectral_dim"), e.to_string()))
    }

    /// Unwarped filterbank producing `spectral_dim` log-mel values.
    pub fn filterbank(&self) -> FilterbankConfig {
        FilterbankConfig {
            num_filters: self.spectral_dim,
            sample_rate: CORPUS_SAMPLE_RATE,
            fft_bins: self.fft_bins,
            freq_range: CORPUS_FREQ_RANGE,
            warp_factor: 1.0,
            include_energy: false,
        }
    }

    /// Held-out utterances per training speaker.
    pub fn heldout_per_speaker(&self) -> usize {
        if self.utterances_per_speaker < 2 || self.heldout_fraction == 0.0 {
            return 0;
        }
        ((self.utterances_per_speaker as f64 * self.heldout_fraction).round() as usize)
            .clamp(1, self.utterances_per_speaker - 1)
    }
}

/// A speaker's warp factor and affine log-mel distortion `x -> A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub warp: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl SpeakerProfile {
    pub fn condition_number(&self) -> f64 {
        let sv = self.a.clone().singular_values();
        sv.max() / sv.min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawUtterance {
    pub id: String,
    pub speaker: usize,
    /// `T x fft_bins` power spectrum.
    pub spectrum: FrameMatrix,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Heldout,
    Test,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerProfile>,
    pub train: Vec<RawUtterance>,
    pub heldout: Vec<RawUtterance>,
    pub test: Vec<RawUtterance>,
    /// SHA-256 of the spec and all generated values.
    pub hash: String,
}

impl Corpus {
    pub fn utterances(&self) -> impl Iterator<Item = (Split, &RawUtterance)> {
        self.train
            .iter()
            .map(|u| (Split::Train, u))
            .chain(self.heldout.iter().map(|u| (Split::Heldout, u)))
            .chain(self.test.iter().map(|u| (Split::Test, u)))
    }

    pub fn speaker(&self, utt: &RawUtterance) -> &SpeakerProfile {
        &self.speakers[utt.speaker]
    }

    /// Log-mel features of an utterance after the speaker distortion. With
    /// `normalize_warp` the filterbank is warped by the speaker's factor,
    /// which undoes the speaker's frequency scaling.
    pub fn log_mel(&self, utt: &RawUtterance, normalize_warp: bool) -> Result<FrameMatrix> {
        let spk = self.speaker(utt);
        let mut fb = self.spec.filterbank();
        if normalize_warp {
            fb.warp_factor = spk.warp;
        }
        let mut m = mel_filterbank(&utt.spectrum, &fb)?;
        for t in 0..m.frames() {
            let y = &spk.a * DVector::from_column_slice(m.row(t)) + &spk.b;
            m.row_mut(t).copy_from_slice(y.as_slice());
        }
        Ok(m)
    }
}

/// Per-class log-power envelope: a spectral tilt plus Gaussian peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    /// `(center Hz, width Hz, height)` per peak.
    pub peaks: Vec<(f64, f64, f64)>,
}

impl ClassTemplate {
    pub fn log_power(&self, hz: f64, separation: f64) -> f64 {
        let bumps: f64 = self.peaks.iter().map(|&(c, w, h)| h * (-(hz - c) * (hz - c) / (2.0 * w * w)).exp()).sum();
        -hz / 2_000.0 + separation * bumps
    }
}

pub fn class_templates(spec: &CorpusSpec) -> Vec<ClassTemplate> {
    let nyquist = CORPUS_SAMPLE_RATE / 2.0;
    (0..spec.num_classes)
        .map(|k| {
            let mut rng = KeyedRng::from_parts(&[spec.master_seed, hash_str("class"), k as u64]);
            let peaks = (0..PEAKS_PER_CLASS)
                .map(|_| (rng.range(150.0, 0.9 * nyquist), rng.range(80.0, 250.0), rng.range(1.5, 3.0)))
                .collect();
            ClassTemplate { peaks }
        })
        .collect()
}

/// Noise-free, unwarped, undistorted log-mel vector of each class.
pub fn template_log_mels(spec: &CorpusSpec) -> Result<Vec<Vec<f64>>> {
    let fb = spec.filterbank();
    let rows: Vec<Vec<f64>> = class_templates(spec)
        .iter()
        .map(|tpl| (0..fb.fft_bins).map(|k| tpl.log_power(fb.bin_hz(k), spec.separation).exp()).collect())
        .collect();
    let m = mel_filterbank(&FrameMatrix::from_rows(&rows)?, &fb)?;
    Ok((0..m.frames()).map(|k| m.row(k).to_vec()).collect())
}

/// Orthogonal matrix `(I - K)^-1 (I + K)` from a random banded skew-symmetric
/// `K`.
fn cayley_rotation(n: usize, strength: f64, rng: &mut KeyedRng) -> Result<DMatrix<f64>> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n.min(i + 3) {
            let v = strength * rng.normal();
            k[(i, j)] = v;
            k[(j, i)] = -v;
        }
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let inv = (&eye - &k).try_inverse().ok_or_else(|| Error::Singular("Cayley transform".into()))?;
    Ok(inv * (eye + k))
}

fn speaker_profile(spec: &CorpusSpec, s: usize) -> Result<SpeakerProfile> {
    let n = spec.spectral_dim;
    let mut rng = KeyedRng::from_parts(&[spec.master_seed, hash_str("speaker"), s as u64]);
    let warp = 1.0 + spec.warp_range * (2.0 * rng.uniform() - 1.0);
    let (a, b) = if spec.distortion {
        let q1 = cayley_rotation(n, spec.rotation, &mut rng)?;
        let q2 = cayley_rotation(n, spec.rotation, &mut rng)?;
        let scales = DVector::from_fn(n, |_, _| spec.condition.powf(rng.uniform() - 0.5));
        let a = q1 * DMatrix::from_diagonal(&scales) * q2;
        let b = DVector::from_fn(n, |_, _| spec.offset_scale * rng.normal());
        (a, b)
    } else {
        (DMatrix::identity(n, n), DVector::zeros(n))
    };
    Ok(SpeakerProfile { id: format!("spk{s:03}"), warp, a, b })
}

fn generate_utterance(
    spec: &CorpusSpec,
    templates: &[ClassTemplate],
    speaker: &SpeakerProfile,
    s: usize,
    u: usize,
) -> RawUtterance {
    let mut rng = KeyedRng::from_parts(&[spec.master_seed, hash_str("utterance"), s as u64, u as u64]);
    let fb = spec.filterbank();
    let warped = FilterbankConfig { warp_factor: speaker.warp, ..fb.clone() };
    let axis: Vec<f64> = (0..fb.fft_bins).map(|k| warped.warp_hz(fb.bin_hz(k))).collect();
    let t_max = spec.frames_per_utterance;
    let mut labels = Vec::with_capacity(t_max);
    let mut data = Vec::with_capacity(t_max * fb.fft_bins);
    let [lo, hi] = spec.segment_frames;
    while labels.len() < t_max {
        let class = rng.below(spec.num_classes);
        let len = (lo + rng.below(hi - lo + 1)).min(t_max - labels.len());
        let gain = spec.gain_std * rng.normal();
        let envelope: Vec<f64> = axis.iter().map(|&hz| templates[class].log_power(hz, spec.separation)).collect();
        for _ in 0..len {
            labels.push(class as u32);
            data.extend(envelope.iter().map(|e| (e + gain + spec.noise * rng.normal()).exp()));
        }
    }
    RawUtterance {
        id: format!("{}-u{u:03}", speaker.id),
        speaker: s,
        spectrum: FrameMatrix::new(t_max, fb.fft_bins, data).expect("frame count matches"),
        labels,
    }
}

fn corpus_hash(spec: &CorpusSpec, speakers: &[SpeakerProfile], utts: &[RawUtterance]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(toml::to_string(spec).map_err(|e| Error::config("corpus", e.to_string()))?.as_bytes());
    for spk in speakers {
        h.update(spk.id.as_bytes());
        for v in std::iter::once(&spk.warp).chain(spk.a.iter()).chain(spk.b.iter()) {
            h.update(v.to_le_bytes());
        }
    }
    for u in utts {
        h.update(u.id.as_bytes());
        for v in u.spectrum.as_slice() {
            h.update(v.to_le_bytes());
        }
        for l in &u.labels {
            h.update(l.to_le_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Generates the corpus described by `spec`. Training speakers come first;
/// the last `test_speakers` speakers form the test split. The last
/// utterances of each training speaker form the held-out split.
pub fn generate_corpus(spec: &CorpusSpec, exec: Exec) -> Result<Corpus> {
    spec.validate("corpus")?;
    let templates = class_templates(spec);
    let speakers = (0..spec.num_speakers).map(|s| speaker_profile(spec, s)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.num_speakers).flat_map(|s| (0..spec.utterances_per_speaker).map(move |u| (s, u))).collect();
    let utts = par::map_indices(jobs.len(), exec, |i| {
        let (s, u) = jobs[i];
        generate_utterance(spec, &templates, &speakers[s], s, u)
    });
    let hash = corpus_hash(spec, &speakers, &utts)?;
    let first_test = spec.num_speakers - spec.test_speakers;
    let first_heldout = spec.utterances_per_speaker - spec.heldout_per_speaker();
    let (mut train, mut heldout, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, utt) in utts.into_iter().enumerate() {
        let (s, u) = jobs[i];
        if s >= first_test {
            test.push(utt);
        } else if u >= first_heldout {
            heldout.push(utt);
        } else {
            train.push(utt);
        }
    }
    Ok(Corpus { spec: spec.clone(), speakers, train, heldout, test, hash })
}
