use serde::{Deserialize, Serialize};

use super::FrameMatrix;
use crate::{Error, Result};

/// Floor added inside the logarithm of filterbank energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Lower and upper warp-factor limits.
pub const WARP_RANGE: (f64, f64) = (0.8, 1.2);

/// Breakpoint of the piecewise-linear warp as a fraction of Nyquist.
const WARP_BREAKPOINT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterbankConfig {
    pub num_filters: usize,
    pub sample_rate: f64,
    /// Number of spectrum bins, spanning 0 Hz to Nyquist inclusive.
    pub fft_bins: usize,
    pub freq_range: [f64; 2],
    #[serde(default = "one")]
    pub warp_factor: f64,
    #[serde(default)]
    pub include_energy: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        FilterbankConfig {
            num_filters: 40,
            sample_rate: 16_000.0,
            fft_bins: 257,
            freq_range: [64.0, 8_000.0],
            warp_factor: 1.0,
            include_energy: false,
        }
    }
}

impl FilterbankConfig {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_filters == 0 {
            return Err(Error::config("num_filters", "must be at least 1"));
        }
        if self.fft_bins < 2 {
            return Err(Error::config("fft_bins", "must be at least 2"));
        }
        let [lo, hi] = self.freq_range;
        if !(lo >= 0.0 && lo < hi && hi <= self.nyquist()) {
            return Err(Error::config(
                "freq_range",
                format!("need 0 <= low < high <= {} Hz, got [{lo}, {hi}]", self.nyquist()),
            ));
        }
        check_warp(self.warp_factor)
    }

    /// Frequency of spectrum bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.nyquist() / (self.fft_bins - 1) as f64
    }

    /// Piecewise-linear VTLN warp of a physical frequency.
    pub fn warp_hz(&self, hz: f64) -> f64 {
        warp(hz, self.warp_factor, self.nyquist())
    }

    /// Inverse of [`warp_hz`](Self::warp_hz).
    pub fn unwarp_hz(&self, hz: f64) -> f64 {
        unwarp(hz, self.warp_factor, self.nyquist())
    }

    /// Edge frequencies on the unwarped axis: `num_filters + 2` points equally
    /// spaced in mel between the range limits.
    pub fn mel_edges_hz(&self) -> Vec<f64> {
        let lo = hz_to_mel(self.freq_range[0]);
        let hi = hz_to_mel(self.freq_range[1]);
        let n = self.num_filters + 1;
        (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
    }

    /// Filter centers in physical frequency after warping.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let edges = self.mel_edges_hz();
        (1..=self.num_filters).map(|m| self.unwarp_hz(edges[m])).collect()
    }
}

fn check_warp(alpha: f64) -> Result<()> {
    if !(WARP_RANGE.0..=WARP_RANGE.1).contains(&alpha) {
        return Err(Error::config("warp_factor", format!("{alpha} outside [{}, {}]", WARP_RANGE.0, WARP_RANGE.1)));
    }
    Ok(())
}

fn warp(hz: f64, alpha: f64, nyquist: f64) -> f64 {
    if alpha == 1.0 {
        return hz;
    }
    let knee = WARP_BREAKPOINT * nyquist;
    if hz <= knee {
        alpha * hz
    } else {
        let slope = (nyquist - alpha * knee) / (nyquist - knee);
        alpha * knee + slope * (hz - knee)
    }
}

fn unwarp(hz: f64, alpha: f64, nyquist: f64) -> f64 {
    if alpha == 1.0 {
        return hz;
    }
    let knee = WARP_BREAKPOINT * nyquist;
    if hz <= alpha * knee {
        hz / alpha
    } else {
        let slope = (nyquist - alpha * knee) / (nyquist - knee);
        knee + (hz - alpha * knee) / slope
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Returns `config` with its warp factor replaced by `warp_factor`. The
/// filter edges of the result are the unwarped edges mapped through the
/// inverse piecewise-linear warp.
pub fn apply_warp(config: &FilterbankConfig, warp_factor: f64) -> Result<FilterbankConfig> {
    check_warp(warp_factor)?;
    Ok(FilterbankConfig { warp_factor, ..config.clone() })
}

/// Triangular filter weights over spectrum bins. Each filter's weights sum
/// to one, so a flat spectrum yields equal outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// For each filter, the first bin with nonzero weight and the weights.
    filters: Vec<(usize, Vec<f64>)>,
    fft_bins: usize,
}

impl FilterBank {
    pub fn new(config: &FilterbankConfig) -> Result<Self> {
        config.validate()?;
        let edges = config.mel_edges_hz();
        let mut filters = Vec::with_capacity(config.num_filters);
        for m in 0..config.num_filters {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let raw: Vec<f64> = (0..config.fft_bins)
                .map(|k| {
                    let f = config.warp_hz(config.bin_hz(k));
                    if f > left && f < right {
                        if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    } else {
                        0.0
                    }
                })
                .collect();
            let first = raw.iter().position(|&w| w > 0.0).ok_or_else(|| {
                Error::config("num_filters", format!("filter {m} ({left:.1}-{right:.1} Hz) covers no spectrum bin"))
            })?;
            let last = raw.iter().rposition(|&w| w > 0.0).unwrap();
            let total: f64 = raw[first..=last].iter().sum();
            let weights = raw[first..=last].iter().map(|w| w / total).collect();
            filters.push((first, weights));
        }
        Ok(FilterBank { filters, fft_bins: config.fft_bins })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn fft_bins(&self) -> usize {
        self.fft_bins
    }

    /// Weight of bin `k` in filter `m`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, w) = &self.filters[m];
        if k >= *first && k < first + w.len() {
            w[k - first]
        } else {
            0.0
        }
    }

    /// Bin range `[first, last]` with nonzero weight.
    pub fn support(&self, m: usize) -> (usize, usize) {
        let (first, w) = &self.filters[m];
        (*first, first + w.len() - 1)
    }

    /// Dense `num_filters x fft_bins` weight table.
    pub fn weight_table(&self) -> Vec<Vec<f64>> {
        (0..self.num_filters()).map(|m| (0..self.fft_bins).map(|k| self.weight(m, k)).collect()).collect()
    }

    /// Log filterbank energies of one power-spectrum frame.
    pub fn apply_frame(&self, spectrum: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            let e: f64 = w.iter().zip(&spectrum[*first..]).map(|(a, b)| a * b).sum();
            *o = (e + LOG_FLOOR).ln();
        }
    }
}

/// Log mel filterbank energies for each frame of a power spectrogram.
pub fn mel_filterbank(power_spectrum: &FrameMatrix, config: &FilterbankConfig) -> Result<FrameMatrix> {
    let bank = FilterBank::new(config)?;
    if power_spectrum.dims() != config.fft_bins {
        return Err(Error::Dimension(format!(
            "spectrum has {} bins, filterbank expects {}",
            power_spectrum.dims(),
            config.fft_bins
        )));
    }
    if let Some(i) = power_spectrum.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("power spectrum value {i}")));
    }
    if power_spectrum.as_slice().iter().any(|&x| x < 0.0) {
        return Err(Error::Dimension("power spectrum must be nonnegative".into()));
    }
    let mut out = FrameMatrix::zeros(power_spectrum.frames(), config.num_filters);
    for t in 0..power_spectrum.frames() {
        bank.apply_frame(power_spectrum.row(t), out.row_mut(t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FilterbankConfig {
        FilterbankConfig {
            num_filters: 3,
            sample_rate: 8000.0,
            fft_bins: 129,
            freq_range: [0.0, 4000.0],
            warp_factor: 1.0,
            include_energy: false,
        }
    }

    #[test]
    fn flat_spectrum_gives_equal_energies() {
        let spec = FrameMatrix::new(1, 129, vec![1.0; 129]).unwrap();
        let out = mel_filterbank(&spec, &small()).unwrap();
        let r = out.row(0);
        assert!((r[0] - r[1]).abs() < 1e-12 && (r[1] - r[2]).abs() < 1e-12);
    }

    #[test]
    fn zero_spectrum_hits_the_floor() {
        let spec = FrameMatrix::zeros(2, 129);
        let out = mel_filterbank(&spec, &small()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_at_center_peaks_in_its_filter() {
        let cfg = FilterbankConfig { num_filters: 10, ..small() };
        let bank = FilterBank::new(&cfg).unwrap();
        let centers = cfg.center_frequencies();
        for (m, &c) in centers.iter().enumerate() {
            let k = (c / cfg.bin_hz(1)).round() as usize;
            let mut spec = vec![0.0; cfg.fft_bins];
            spec[k] = 1.0;
            // direct summation oracle
            let direct: Vec<f64> = (0..cfg.num_filters)
                .map(|j| (bank.weight_table()[j].iter().zip(&spec).map(|(w, s)| w * s).sum::<f64>() + LOG_FLOOR).ln())
                .collect();
            let out = mel_filterbank(&FrameMatrix::new(1, cfg.fft_bins, spec).unwrap(), &cfg).unwrap();
            for (a, b) in out.row(0).iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
            let argmax = (0..cfg.num_filters).max_by(|&a, &b| direct[a].total_cmp(&direct[b])).unwrap();
            assert_eq!(argmax, m);
            let top = direct[m];
            assert!(direct.iter().enumerate().all(|(j, &v)| j == m || v < top));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = small();
        assert!(mel_filterbank(&FrameMatrix::zeros(1, 10), &cfg).is_err());
        let mut v = vec![1.0; 129];
        v[3] = f64::NAN;
        assert!(matches!(mel_filterbank(&FrameMatrix::new(1, 129, v).unwrap(), &cfg), Err(Error::NonFinite(_))));
        assert!(apply_warp(&cfg, 1.3).is_err());
        let bad = FilterbankConfig { freq_range: [3000.0, 5000.0], ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_warp_is_identity() {
        let cfg = FilterbankConfig::default();
        let warped = apply_warp(&cfg, 1.0).unwrap();
        assert_eq!(FilterBank::new(&cfg).unwrap(), FilterBank::new(&warped).unwrap());
        let nyq = cfg.nyquist();
        for alpha in [0.8, 0.9, 1.1, 1.2] {
            for hz in [0.0, 100.0, 3000.0, 0.79 * nyq, 0.9 * nyq, nyq] {
                let w = warp(hz, alpha, nyq);
                assert!((unwarp(w, alpha, nyq) - hz).abs() < 1e-9);
            }
            assert!((warp(nyq, alpha, nyq) - nyq).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_contiguous_and_tile_the_axis() {
        let cfg = FilterbankConfig { warp_factor: 0.9, ..FilterbankConfig::default() };
        let bank = FilterBank::new(&cfg).unwrap();
        let table = bank.weight_table();
        for row in &table {
            let nz: Vec<usize> = row.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(k, _)| k).collect();
            assert_eq!(nz.len(), nz.last().unwrap() - nz[0] + 1, "support has a hole");
        }
        // bins strictly between the first and last center that are not exactly
        // on a center fall inside exactly two adjacent filters
        let edges = cfg.mel_edges_hz();
        for k in 0..cfg.fft_bins {
            let f = cfg.warp_hz(cfg.bin_hz(k));
            if f <= edges[1] || f >= edges[cfg.num_filters] || edges.contains(&f) {
                continue;
            }
            let owners: Vec<usize> = (0..cfg.num_filters).filter(|&m| table[m][k] > 0.0).collect();
            assert_eq!(owners.len(), 2, "bin {k}");
            assert_eq!(owners[1], owners[0] + 1);
        }
    }
}
