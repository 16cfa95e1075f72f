use acnn::adaptation::*;
use acnn::features::UtteranceFeatures;
use acnn::par::Exec;
use acnn::rng::KeyedRng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Samples from a mixture whose component covariances are `L L^T`.
fn mixture(n: usize, means: &[Vec<f64>], chol: &DMatrix<f64>, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = KeyedRng::new(seed);
    let d = chol.nrows();
    (0..n)
        .map(|_| {
            let c = rng.below(means.len());
            let z = DVector::from_fn(d, |_, _| rng.normal());
            let x = chol * z;
            (0..d).map(|j| means[c][j] + x[j]).collect()
        })
        .collect()
}

fn off_diagonal_mass(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += c[(i, j)].powi(2) / (c[(i, i)] * c[(j, j)]);
            }
        }
    }
    s.sqrt()
}

fn gmm_opts(k: usize) -> GmmTrainOptions {
    GmmTrainOptions { components: k, iterations: 8, seed: 3, exec: Exec::default() }
}

#[test]
fn stc_on_uncorrelated_data_stays_diagonal() {
    let chol = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 2.0]));
    let means = vec![vec![0.0, 0.0, 0.0], vec![4.0, -3.0, 6.0]];
    let frames = mixture(6000, &means, &chol, 1);
    let (gmm, _) = train_diag_gmm(&frames, &gmm_opts(2)).unwrap();
    let stc = estimate_stc(&gmm, &frames, &StcOptions::default()).unwrap();
    for i in 0..3 {
        let scale = stc.matrix[(i, i)];
        for j in 0..3 {
            if i != j {
                assert!((stc.matrix[(i, j)] / scale).abs() < 0.05, "S = {}", stc.matrix);
            }
        }
    }
}

#[test]
fn stc_reduces_off_diagonal_mass_of_correlated_data() {
    let chol = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.0, 0.0, 0.0, 0.8, 0.6, 0.0, 0.0, 0.5, 0.4, 0.7, 0.0, 0.2, -0.5, 0.3, 0.6],
    );
    let means = vec![vec![0.0; 4], vec![3.0, 1.0, -2.0, 0.5], vec![-2.0, 2.0, 1.0, -1.0]];
    let frames = mixture(5000, &means, &chol, 2);
    let (gmm, _) = train_diag_gmm(&frames, &gmm_opts(3)).unwrap();
    let stc = estimate_stc(&gmm, &frames, &StcOptions::default()).unwrap();
    let before = off_diagonal_mass(&weighted_within_covariance(&gmm, &frames, &DMatrix::identity(4, 4)));
    let after = off_diagonal_mass(&weighted_within_covariance(&gmm, &frames, &stc.matrix));
    assert!(after < before, "{before} -> {after}");
    for w in stc.objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
    }
    assert!(stc.matrix.determinant().abs() > 1e-12);
}

#[test]
fn em_is_monotone_and_keeps_a_valid_mixture() {
    let chol = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.9, 0.0, -0.2, 0.1, 0.5]);
    let means = vec![vec![0.0; 3], vec![2.0, 2.0, 2.0], vec![-3.0, 1.0, 0.0], vec![1.0, -2.0, 3.0]];
    let frames = mixture(3000, &means, &chol, 5);
    let (gmm, trace) =
        train_diag_gmm(&frames, &GmmTrainOptions { components: 6, iterations: 15, ..gmm_opts(6) }).unwrap();
    assert_eq!(trace.log_likelihood.len(), 16);
    for w in trace.log_likelihood.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert!((gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    let n = frames.len() as f64;
    for j in 0..3 {
        let mean = frames.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = frames.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        for v in &gmm.variances {
            assert!(v[j] >= 1e-4 * var * (1.0 - 1e-12));
        }
    }
}

#[test]
fn estimation_is_identical_across_exec_modes() {
    let chol = DMatrix::identity(3, 3) * 0.7;
    let means = vec![vec![0.0; 3], vec![2.0, -1.0, 1.0]];
    let frames = mixture(1500, &means, &chol, 8);
    let seq = GmmTrainOptions { exec: Exec::Sequential, ..gmm_opts(4) };
    let par = GmmTrainOptions { exec: Exec::Parallel, ..gmm_opts(4) };
    let (g1, t1) = train_diag_gmm(&frames, &seq).unwrap();
    let (g2, t2) = train_diag_gmm(&frames, &par).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(t1.log_likelihood, t2.log_likelihood);
    let s1 = estimate_stc(&g1, &frames, &StcOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
    let s2 = estimate_stc(&g1, &frames, &StcOptions { exec: Exec::Parallel, ..Default::default() }).unwrap();
    assert_eq!(s1, s2);
    let model = s1.transformed_gmm();
    let shifted: Vec<Vec<f64>> =
        frames[..400].iter().map(|x| s1.apply(&x.iter().map(|v| v + 0.5).collect::<Vec<_>>())).collect();
    let f1 =
        estimate_fmllr(&model, "s", &shifted, &FmllrOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
    let f2 =
        estimate_fmllr(&model, "s", &shifted, &FmllrOptions { exec: Exec::Parallel, ..Default::default() }).unwrap();
    assert_eq!(f1, f2);
}

#[test]
fn fmllr_in_stc_space_undoes_a_speaker_shift() {
    let chol = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.7, 0.7, 0.0, 0.3, -0.3, 0.8]);
    let means = vec![vec![0.0; 3], vec![4.0, 1.0, -3.0], vec![-3.0, 3.0, 2.0]];
    let frames = mixture(6000, &means, &chol, 11);
    let (gmm, _) = train_diag_gmm(&frames, &gmm_opts(3)).unwrap();
    let stc = estimate_stc(&gmm, &frames, &StcOptions::default()).unwrap();
    let delta = [0.8, -0.6, 0.5];
    let speaker: Vec<Vec<f64>> = mixture(5000, &means, &chol, 12)
        .into_iter()
        .map(|x| x.iter().zip(&delta).map(|(a, b)| a + b).collect())
        .collect();
    let in_stc: Vec<Vec<f64>> = speaker.iter().map(|x| stc.apply(x)).collect();
    let m = estimate_fmllr(&stc.transformed_gmm(), "spk", &in_stc, &FmllrOptions::default()).unwrap();
    for (before, after) in &m.auxiliary {
        assert!(*after >= before - 1e-6 * before.abs());
    }
    let data: Vec<f64> = speaker.iter().flatten().copied().collect();
    let utt = UtteranceFeatures::new("u", "spk", (speaker.len(), 3, 1), data).unwrap();
    let adapted = adapt_features(&utt, &stc, &m).unwrap();
    let n = speaker.len() as f64;
    for j in 0..3 {
        let shifted_mean = speaker.iter().map(|x| x[j]).sum::<f64>() / n;
        let adapted_mean = (0..adapted.num_frames()).map(|t| adapted.frame(t)[j]).sum::<f64>() / n;
        assert!((shifted_mean - adapted_mean - delta[j]).abs() < 0.1, "dim {j}");
    }
}

#[test]
fn transforms_for_other_speakers_are_refused() {
    let gmm = DiagonalGmm::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
    let stc = StcTransform::identity(&gmm);
    let utt = UtteranceFeatures::new("u", "alice", (1, 2, 1), vec![1.0, 2.0]).unwrap();
    let m = FmllrTransform::identity("bob", 2);
    assert!(adapt_features(&utt, &stc, &m).is_err());
}

fn well_conditioned(d: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let mut rng = KeyedRng::new(seed);
    DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| scale * rng.normal())
}

fn chain(d: usize, seed: u64) -> (StcTransform, FmllrTransform) {
    let gmm = DiagonalGmm::new(vec![1.0], vec![vec![0.0; d]], vec![vec![1.0; d]]).unwrap();
    let mut stc = StcTransform::identity(&gmm);
    stc.matrix = well_conditioned(d, seed, 0.3);
    let mut m = FmllrTransform::identity("spk", d);
    m.a = well_conditioned(d, seed + 1, 0.3);
    let mut rng = KeyedRng::new(seed + 2);
    m.b = DVector::from_fn(d, |_, _| rng.normal());
    (stc, m)
}

fn features(t: usize, d: usize, channels: usize, seed: u64) -> UtteranceFeatures {
    let mut rng = KeyedRng::new(seed);
    let statics: Vec<f64> = (0..t * d).map(|_| rng.range(-3.0, 3.0)).collect();
    let u = UtteranceFeatures::new("u", "spk", (t, d, 1), statics).unwrap();
    if channels == 3 {
        u.recompute_deltas(2).unwrap()
    } else {
        u
    }
}

#[test]
fn identity_chain_is_exact_and_unit_offset_shifts_one_dimension() {
    let gmm = DiagonalGmm::new(vec![1.0], vec![vec![0.0; 4]], vec![vec![1.0; 4]]).unwrap();
    let stc = StcTransform::identity(&gmm);
    let mut m = FmllrTransform::identity("spk", 4);
    let u = features(7, 4, 3, 1);
    assert_eq!(adapt_features(&u, &stc, &m).unwrap(), u);
    m.b[0] = 1.0;
    let shifted = adapt_features(&u, &stc, &m).unwrap();
    for t in 0..7 {
        for f in 0..4 {
            let expect = u.get(t, f, 0) + if f == 0 { 1.0 } else { 0.0 };
            assert_eq!(shifted.get(t, f, 0), expect);
            // deltas of a constant shift are unchanged
            assert!((shifted.get(t, f, 1) - u.get(t, f, 1)).abs() < 1e-12);
        }
    }
}

#[test]
fn energy_row_passes_through_adaptation() {
    let (stc, m) = chain(3, 40);
    let u = features(5, 3, 3, 41);
    let with_energy = acnn::features::append_energy(&u, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let adapted = adapt_features(&with_energy, &stc, &m).unwrap();
    assert_eq!(adapted.shape(), with_energy.shape());
    for t in 0..5 {
        assert_eq!(adapted.get(t, 3, 0), (t + 1) as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chain_matches_three_step_evaluation(d in 1usize..7, t in 1usize..8, seed in 0u64..1_000) {
        let (stc, m) = chain(d, seed);
        let u = features(t, d, 1, seed + 9);
        let adapted = adapt_features(&u, &stc, &m).unwrap();
        let s_inv = stc.matrix.clone().try_inverse().unwrap();
        for i in 0..t {
            let f = DVector::from_column_slice(u.frame(i));
            let decorrelated = &stc.matrix * f;
            let normalized = &m.a * decorrelated + &m.b;
            let back = &s_inv * normalized;
            for j in 0..d {
                prop_assert!((adapted.frame(i)[j] - back[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adaptation_inverts(d in 1usize..7, t in 1usize..8, seed in 0u64..1_000, three in any::<bool>()) {
        let (stc, m) = chain(d, seed);
        let u = features(t, d, if three { 3 } else { 1 }, seed + 5);
        let adapted = adapt_features(&u, &stc, &m).unwrap();
        let back = invert_adaptation(&adapted, &stc, &m).unwrap();
        for (x, y) in back.as_slice().iter().zip(u.as_slice()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn transforms_round_trip_through_text(d in 1usize..6, seed in 0u64..1_000) {
        let (stc, m) = chain(d, seed);
        let m2 = FmllrTransform::from_text(&m.to_text(), "mem").unwrap();
        prop_assert_eq!(&m2.a, &m.a);
        prop_assert_eq!(&m2.b, &m.b);
        prop_assert_eq!(&m2.speaker_id, &m.speaker_id);
        let s2 = StcTransform::from_text(&stc.to_text(), "mem").unwrap();
        prop_assert_eq!(&s2.matrix, &stc.matrix);
        prop_assert_eq!(s2.model_tag, stc.model_tag);
        let gmm = stc.transformed_gmm();
        prop_assert_eq!(DiagonalGmm::from_text(&gmm.to_text(), "mem").unwrap(), gmm);
    }
}
