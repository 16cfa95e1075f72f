#![allow(clippy::needless_range_loop)]

use acnn::features::*;
use acnn::par::Exec;
use proptest::prelude::*;

fn mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filter centers on the unwarped axis, computed independently.
fn oracle_centers(cfg: &FilterbankConfig) -> Vec<f64> {
    let (lo, hi) = (mel(cfg.freq_range[0]), mel(cfg.freq_range[1]));
    let n = cfg.num_filters + 1;
    (1..=cfg.num_filters).map(|m| inv_mel(lo + (hi - lo) * m as f64 / n as f64)).collect()
}

fn fine_config() -> FilterbankConfig {
    FilterbankConfig {
        num_filters: 24,
        sample_rate: 16_000.0,
        fft_bins: 2049,
        freq_range: [64.0, 8_000.0],
        ..Default::default()
    }
}

fn tone(cfg: &FilterbankConfig, hz: f64) -> FrameMatrix {
    let k = (hz / cfg.nyquist() * (cfg.fft_bins - 1) as f64).round() as usize;
    let mut row = vec![0.0; cfg.fft_bins];
    row[k] = 1.0;
    FrameMatrix::from_rows(&[row]).unwrap()
}

fn peak(cfg: &FilterbankConfig, spectrum: &FrameMatrix) -> usize {
    let out = mel_filterbank(spectrum, cfg).unwrap();
    let row = out.row(0);
    (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
}

#[test]
fn tone_at_each_center_peaks_in_its_filter() {
    let cfg = fine_config();
    let bank = FilterBank::new(&cfg).unwrap();
    for (m, &c) in oracle_centers(&cfg).iter().enumerate() {
        let spec = tone(&cfg, c);
        assert_eq!(peak(&cfg, &spec), m);
        // direct summation of the normalized weight table
        let k = spec.row(0).iter().position(|&v| v > 0.0).unwrap();
        let direct = (bank.weight_table()[m][k] + LOG_FLOOR).ln();
        assert!((mel_filterbank(&spec, &cfg).unwrap().row(0)[m] - direct).abs() < 1e-12);
    }
}

#[test]
fn warped_tone_peak_moves_to_the_predicted_filter() {
    let cfg = fine_config();
    let centers = oracle_centers(&cfg);
    let knee = 0.8 * cfg.nyquist();
    for alpha in [0.9, 1.1] {
        let warped = apply_warp(&cfg, alpha).unwrap();
        for (m, &c) in centers.iter().enumerate().filter(|(_, &c)| c / alpha < knee && c < knee) {
            // below the knee the warp is f -> alpha f, so the tone that the
            // warped bank centers on filter m sits at c / alpha
            let hz = c / alpha;
            assert_eq!(peak(&warped, &tone(&cfg, hz)), m, "alpha {alpha} filter {m}");
            let unwarped_peak = (0..centers.len())
                .min_by(|&a, &b| (mel(centers[a]) - mel(hz)).abs().total_cmp(&(mel(centers[b]) - mel(hz)).abs()))
                .unwrap();
            assert_eq!(peak(&cfg, &tone(&cfg, hz)), unwarped_peak);
        }
    }
}

#[test]
fn opposite_warps_separate_a_tone() {
    let cfg = fine_config();
    let spec = tone(&cfg, 2_000.0);
    let lo = peak(&apply_warp(&cfg, 0.9).unwrap(), &spec);
    let hi = peak(&apply_warp(&cfg, 1.1).unwrap(), &spec);
    assert_ne!(lo, hi);
    assert!(lo < hi);
}

#[test]
fn out_of_range_warp_is_rejected() {
    assert!(apply_warp(&fine_config(), 1.3).is_err());
    assert!(apply_warp(&fine_config(), 0.75).is_err());
}

#[test]
fn context_four_gives_nine_frame_windows() {
    let data: Vec<f64> = (0..6 * 2).map(|v| v as f64).collect();
    let u = UtteranceFeatures::new("u", "s", (6, 2, 1), data).unwrap();
    let windows = splice_context(&u, 4);
    assert_eq!(windows.len(), 6);
    for (t, w) in windows.iter().enumerate() {
        assert_eq!(w.len(), 9 * 2);
        for slot in 0..9 {
            let src = (t as i64 + slot as i64 - 4).clamp(0, 5) as usize;
            assert_eq!(&w[slot * 2..slot * 2 + 2], u.frame(src));
        }
    }
}

#[test]
fn energy_round_trip_and_empty_utterance() {
    let u = UtteranceFeatures::new("u", "s", (2, 3, 1), vec![0.0; 6]).unwrap();
    let e = append_energy(&u, &[1.0, 2.0]).unwrap();
    assert_eq!(e.num_freq(), 4);
    assert_eq!((e.get(0, 3, 0), e.get(1, 3, 0)), (1.0, 2.0));
    let (back, energy) = remove_energy(&e).unwrap();
    assert_eq!(back, u);
    assert_eq!(energy, vec![1.0, 2.0]);
    assert!(append_energy(&u, &[1.0]).is_err());
    let empty = UtteranceFeatures::new("e", "s", (0, 3, 1), vec![]).unwrap();
    assert_eq!(append_energy(&empty, &[]).unwrap().num_frames(), 0);
}

#[test]
fn normalized_corpus_is_unchanged_by_a_second_pass() {
    let corpus: Vec<UtteranceFeatures> = (0..3)
        .map(|i| {
            let data: Vec<f64> = (0..40).map(|k| ((k * 7 + i * 3) % 11) as f64 * 0.3 - 1.0 + i as f64).collect();
            UtteranceFeatures::new(format!("u{i}"), "s", (10, 4, 1), data).unwrap()
        })
        .collect();
    let (once, _) = normalize_corpus(&corpus).unwrap();
    let (twice, stats) = normalize_corpus(&once).unwrap();
    for (a, b) in once.iter().zip(&twice) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    for d in 0..stats.dims() {
        assert!(stats.mean[d].abs() < 1e-6 && (stats.variance[d] - 1.0).abs() < 1e-6);
    }
}

fn matrix(t: usize, f: usize) -> impl Strategy<Value = FrameMatrix> {
    prop::collection::vec(-5.0f64..5.0, t * f).prop_map(move |v| FrameMatrix::new(t, f, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deltas_are_linear(
        (x, y) in (1usize..12, 1usize..5).prop_flat_map(|(t, f)| (matrix(t, f), matrix(t, f))),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let combo: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| a * p + b * q).collect();
        let combo = FrameMatrix::new(x.frames(), x.dims(), combo).unwrap();
        let dx = compute_deltas(&x, DELTA_WINDOW).unwrap();
        let dy = compute_deltas(&y, DELTA_WINDOW).unwrap();
        let dc = compute_deltas(&combo, DELTA_WINDOW).unwrap();
        for ch in 0..3 {
            for i in 0..x.as_slice().len() {
                let expect = a * dx[ch].as_slice()[i] + b * dy[ch].as_slice()[i];
                prop_assert!((dc[ch].as_slice()[i] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalization_gives_zero_mean_unit_variance(
        frames in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..40),
    ) {
        let utts: Vec<UtteranceFeatures> = frames
            .chunks(3)
            .enumerate()
            .map(|(i, c)| UtteranceFeatures::new(format!("u{i}"), "s", (c.len(), 3, 1), c.concat()).unwrap())
            .collect();
        let (norm, stats) = normalize_corpus(&utts).unwrap();
        let all: Vec<&[f64]> = norm.iter().flat_map(|u| (0..u.num_frames()).map(move |t| u.frame(t))).collect();
        let n = all.len() as f64;
        for d in 0..3 {
            let mean = all.iter().map(|f| f[d]).sum::<f64>() / n;
            let var = all.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-6);
            if !stats.constant_dims().contains(&d) {
                prop_assert!((var - 1.0).abs() < 1e-3);
            }
        }
        let direct = NormStats::estimate(&utts, Exec::Sequential).unwrap();
        prop_assert_eq!(direct, NormStats::estimate(&utts, Exec::default()).unwrap());
    }

    #[test]
    fn filters_are_contiguous_and_tile_the_warped_axis(
        num_filters in 1usize..30,
        fft_bins in 128usize..700,
        alpha in 0.8f64..1.2,
        lo in 0.0f64..300.0,
    ) {
        let cfg = FilterbankConfig { num_filters, sample_rate: 16_000.0, fft_bins, freq_range: [lo, 7_600.0], warp_factor: alpha, include_energy: false };
        let Ok(bank) = FilterBank::new(&cfg) else { return Ok(()) };
        let table = bank.weight_table();
        for row in &table {
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            prop_assert!(!nz.is_empty());
            prop_assert_eq!(nz.len(), nz[nz.len() - 1] - nz[0] + 1);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let edges = cfg.mel_edges_hz();
        let interior: Vec<f64> = edges[1..=num_filters].to_vec();
        for k in 0..fft_bins {
            let f = cfg.warp_hz(cfg.bin_hz(k));
            let on_center = interior.iter().any(|&c| (c - f).abs() < 1e-9);
            if f <= edges[1] || f >= edges[num_filters] || on_center {
                continue;
            }
            let covering: Vec<usize> = (0..num_filters).filter(|&m| table[m][k] > 0.0).collect();
            prop_assert_eq!(covering.len(), 2);
            prop_assert_eq!(covering[1], covering[0] + 1);
        }
    }

    #[test]
    fn unit_warp_is_an_exact_identity(num_filters in 1usize..20, fft_bins in 200usize..400) {
        let cfg = FilterbankConfig { num_filters, sample_rate: 8_000.0, fft_bins, freq_range: [64.0, 3_800.0], ..Default::default() };
        let warped = apply_warp(&cfg, 1.0).unwrap();
        prop_assert_eq!(&warped, &cfg);
        if let Ok(bank) = FilterBank::new(&cfg) {
            prop_assert_eq!(bank, FilterBank::new(&warped).unwrap());
        }
        for hz in [0.0, 100.0, 1234.5, 3_999.0] {
            prop_assert_eq!(cfg.warp_hz(hz), hz);
        }
    }

    #[test]
    fn warp_and_unwarp_are_inverse(alpha in 0.8f64..1.2, hz in 0.0f64..4_000.0) {
        let cfg = FilterbankConfig { sample_rate: 8_000.0, fft_bins: 129, freq_range: [64.0, 3_800.0], warp_factor: alpha, ..Default::default() };
        prop_assert!((cfg.unwarp_hz(cfg.warp_hz(hz)) - hz).abs() < 1e-9);
        prop_assert!((cfg.warp_hz(4_000.0) - 4_000.0).abs() < 1e-9);
    }

    #[test]
    fn splicing_replicates_edges(t in 1usize..10, f in 1usize..4, context in 0usize..5) {
        let data: Vec<f64> = (0..t * f).map(|v| v as f64).collect();
        let u = UtteranceFeatures::new("u", "s", (t, f, 1), data).unwrap();
        let windows = splice_context(&u, context);
        prop_assert_eq!(windows.len(), t);
        for (i, w) in windows.iter().enumerate() {
            prop_assert_eq!(w.len(), (2 * context + 1) * f);
            prop_assert_eq!(&w[context * f..(context + 1) * f], u.frame(i));
            prop_assert_eq!(&w[..f], u.frame(i.saturating_sub(context)));
            prop_assert_eq!(&w[w.len() - f..], u.frame((i + context).min(t - 1)));
        }
    }

    #[test]
    fn feature_files_round_trip(
        t in 0usize..6,
        f in 1usize..5,
        three in any::<bool>(),
        seed in any::<u32>(),
    ) {
        let c = if three { 3 } else { 1 };
        let data: Vec<f64> = (0..t * f * c).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e6f32) as f64).collect();
        let u = UtteranceFeatures::new("utt-é", "spk", (t, f, c), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.feat");
        write_features(&path, &u).unwrap();
        let back = read_features(&path).unwrap();
        prop_assert_eq!(back.as_slice(), u.as_slice());
        prop_assert_eq!(back.shape(), u.shape());
        prop_assert_eq!(&back.utterance_id, &u.utterance_id);
    }
}
