mod common;

use acnn::network::*;
use acnn::rng::counter_uniform;
use common::*;

fn conv_net(conv: ConvLayerSpec, pool: Option<PoolingSpec>, act: Activation) -> NetworkSpec {
    let mut stream = vec![LayerSpec::Conv(conv), LayerSpec::Activation { function: act }];
    if let Some(p) = pool {
        stream.push(LayerSpec::Pool(p));
    }
    NetworkSpec {
        input: [2, 8, 5],
        streams: vec![stream],
        trunk: vec![LayerSpec::Full { units: 4 }, LayerSpec::Activation { function: Activation::Sigmoid }],
        num_classes: 3,
    }
}

fn check(spec: &NetworkSpec, phase: Phase) -> f64 {
    let net = Network::compile(spec).unwrap();
    let params = net.init_params(5);
    let x = random_tensor(net.input, 3, -1.0, 1.0);
    let ctx = ForwardContext { phase, ..ForwardContext::train(17, 4) };
    max_param_gradient_error(&net, &params.values, &x, 1, &ctx)
}

#[test]
fn gradient_fws_conv() {
    let e = check(&conv_net(ConvLayerSpec::full(3, [3, 3]), None, Activation::Sigmoid), Phase::Train);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn gradient_lws_conv() {
    let e = check(&conv_net(ConvLayerSpec::limited(3, [3, 2], vec![]), None, Activation::Relu), Phase::Train);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn gradient_through_every_pooling_kind() {
    let variants = [
        (PoolKind::Max, 2, 2, PoolAxis::Frequency),
        (PoolKind::Max, 3, 1, PoolAxis::Frequency),
        (PoolKind::Max, 2, 1, PoolAxis::Time),
        (PoolKind::Lp, 2, 2, PoolAxis::Frequency),
        (PoolKind::Lp, 3, 2, PoolAxis::Time),
        (PoolKind::Stochastic, 2, 2, PoolAxis::Frequency),
        (PoolKind::Stochastic, 2, 1, PoolAxis::Time),
    ];
    for (kind, size, stride, axis) in variants {
        let mut pool = PoolingSpec::new(kind, size, stride, axis);
        pool.p_exponent = 3.0;
        let spec = conv_net(ConvLayerSpec::full(2, [3, 2]), Some(pool), Activation::Sigmoid);
        for phase in [Phase::Train, Phase::Test] {
            let e = check(&spec, phase);
            assert!(e < 1e-4, "{kind:?} {size}/{stride} {axis:?} {phase:?}: {e}");
        }
    }
}

#[test]
fn gradient_through_frozen_dropout_and_merge() {
    let spec = MultiScaleSpec {
        input: [1, 6, 3],
        full_stream: vec![LayerSpec::Full { units: 5 }, LayerSpec::Activation { function: Activation::Sigmoid }],
        conv_stream: vec![LayerSpec::Conv(ConvLayerSpec::full(2, [3, 3])), LayerSpec::relu()],
        shared: vec![
            LayerSpec::Dropout { id: 1 },
            LayerSpec::Full { units: 6 },
            LayerSpec::Activation { function: Activation::Sigmoid },
        ],
        num_classes: 3,
    };
    let spec = build_multiscale(&spec).unwrap();
    let net = Network::compile(&spec).unwrap();
    assert_eq!(net.merge_dim, 5 + 2 * 4);
    let params = net.init_params(8);
    let plan = DropoutPlan::uniform(&[1], 0.5, 3, DropoutMode::FixedPerUtterance);
    let seeds = plan.utterance_seeds("utt", &[0]);
    let ctx = ForwardContext { masks: Some(MaskContext { plan: &plan, seeds: &seeds }), ..ForwardContext::train(1, 2) };
    let x = random_tensor(net.input, 4, -1.0, 1.0);
    let e = max_param_gradient_error(&net, &params.values, &x, 2, &ctx);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn merge_of_two_vector_streams_concatenates() {
    let spec = MultiScaleSpec {
        input: [1, 4, 1],
        full_stream: vec![LayerSpec::Full { units: 100 }],
        conv_stream: vec![LayerSpec::Full { units: 200 }],
        shared: vec![],
        num_classes: 2,
    };
    let net = Network::compile(&build_multiscale(&spec).unwrap()).unwrap();
    assert_eq!(net.merge_dim, 300);
}

#[test]
fn conv_only_multiscale_is_the_plain_network() {
    let base = NetworkSpec::default_cnn([3, 40, 11], 10);
    let ms = MultiScaleSpec {
        input: base.input,
        full_stream: vec![],
        conv_stream: base.streams[0].clone(),
        shared: base.trunk.clone(),
        num_classes: 10,
    };
    assert_eq!(build_multiscale(&ms).unwrap(), base);
}

#[test]
fn incompatible_merge_extents_are_rejected() {
    let spec = NetworkSpec {
        input: [1, 6, 5],
        streams: vec![vec![LayerSpec::Conv(ConvLayerSpec::full(1, [2, 2]))], vec![LayerSpec::Full { units: 3 }]],
        trunk: vec![],
        num_classes: 2,
    };
    assert!(Network::compile(&spec).is_err());
}

#[test]
fn default_cnn_runs_on_spliced_input() {
    let net = Network::compile(&NetworkSpec::default_cnn([3, 40, 11], 10)).unwrap();
    let params = net.init_params(1);
    let x = random_tensor(net.input, 2, -1.0, 1.0);
    let p = net.posteriors(&params.values, &x, &ForwardContext::test()).unwrap();
    assert_eq!(p.len(), 10);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn zero_weights_give_uniform_posteriors() {
    let net = Network::compile(&conv_net(ConvLayerSpec::full(2, [3, 3]), None, Activation::Relu)).unwrap();
    let zeros = vec![0.0; net.num_params()];
    let x = random_tensor(net.input, 2, -1.0, 1.0);
    let p = net.posteriors(&zeros, &x, &ForwardContext::test()).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn single_affine_layer_is_logistic_regression() {
    let spec = NetworkSpec { input: [1, 2, 1], streams: vec![vec![]], trunk: vec![], num_classes: 2 };
    let net = Network::compile(&spec).unwrap();
    // logits z0 = 0.5 x0 - x1 + 0.1, z1 = 2 x0 + 0.3 x1 - 0.2
    let w = vec![0.5, -1.0, 2.0, 0.3, 0.1, -0.2];
    let x = Tensor::from_vec(Shape::new(1, 2, 1), vec![0.4, -0.7]);
    let p = net.posteriors(&w, &x, &ForwardContext::test()).unwrap();
    let z0: f64 = 0.5 * 0.4 + 0.7 + 0.1;
    let z1 = 2.0 * 0.4 - 0.3 * 0.7 - 0.2;
    let p1 = 1.0 / (1.0 + (z0 - z1).exp());
    assert!((p[1] - p1).abs() < 1e-12);
    assert!((p[0] - (1.0 - p1)).abs() < 1e-12);
}

#[test]
fn confident_correct_prediction_has_vanishing_gradient() {
    let spec = NetworkSpec { input: [1, 1, 1], streams: vec![vec![]], trunk: vec![], num_classes: 2 };
    let net = Network::compile(&spec).unwrap();
    let w = vec![0.0, 0.0, 400.0, -400.0];
    let x = Tensor::from_vec(Shape::new(1, 1, 1), vec![1.0]);
    let (loss, g) = net.example_gradient(&w, &x, 0, &ForwardContext::test()).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_direct_correlation_of_a_delta() {
    let mut conv = ConvLayerSpec::full(1, [3, 3]);
    conv.stride = [1, 1];
    let (op, out) = ConvOp::resolve(&conv, Shape::new(1, 7, 7), &[Band { start: 0, width: 7 }], "c").unwrap();
    let filter: Vec<f64> = (1..=9).map(f64::from).collect();
    let mut w = filter.clone();
    w.push(0.0);
    let mut x = Tensor::zeros(Shape::new(1, 7, 7));
    let i = x.idx(0, 3, 3);
    x.data[i] = 1.0;
    let y = op.forward(&w, &x, out);
    // correlation oracle: y[f][t] = sum_ij k[i][j] x[f+i][t+j]
    for f in 0..5 {
        for t in 0..5 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += filter[a * 3 + b] * x.at(0, f + a, t + b);
                }
            }
            assert_eq!(y.at(0, f, t), s);
        }
    }
    // the stamp appears flipped relative to the filter
    assert_eq!(y.at(0, 1, 1), 9.0);
    assert_eq!(y.at(0, 3, 3), 1.0);
}

#[test]
fn one_by_one_conv_is_channel_sum() {
    let conv = ConvLayerSpec::full(1, [1, 1]);
    let (op, out) = ConvOp::resolve(&conv, Shape::new(2, 3, 4), &[Band { start: 0, width: 3 }], "c").unwrap();
    let x = random_tensor(Shape::new(2, 3, 4), 5, -1.0, 1.0);
    let y = op.forward(&[1.0, 1.0, 0.0], &x, out);
    for f in 0..3 {
        for t in 0..4 {
            assert_eq!(y.at(0, f, t), x.at(0, f, t) + x.at(1, f, t));
        }
    }
}

#[test]
fn weight_tied_lws_equals_fws_bit_for_bit() {
    for (k, seed) in [(3usize, 1u64), (4, 2), (2, 3)] {
        let input = [2usize, 12, 5];
        let fws = NetworkSpec {
            input,
            streams: vec![vec![LayerSpec::Conv(ConvLayerSpec::full(3, [k, 3]))]],
            trunk: vec![],
            num_classes: 2,
        };
        let mut lws = fws.clone();
        lws.streams[0][0] = LayerSpec::Conv(ConvLayerSpec::limited(3, [k, 3], default_bands(12, k, 1, 3)));
        let nf = Network::compile(&fws).unwrap();
        let nl = Network::compile(&lws).unwrap();
        let pf = nf.init_params(seed);
        let NodeOp::Conv(op) = &nl.streams[0][0].op else { panic!() };
        let groups = op.bands.len();
        let conv_f = pf.block(0);
        let wpg = conv_f.len() - 3;
        let mut conv_l = Vec::new();
        for _ in 0..groups {
            conv_l.extend_from_slice(&conv_f[..wpg]);
        }
        for _ in 0..groups {
            conv_l.extend_from_slice(&conv_f[wpg..]);
        }
        let pl = nl.layout.flatten(&[conv_l, pf.block(1).to_vec()]).unwrap();
        for i in 0..20 {
            let x = random_tensor(nf.input, 100 + i, -2.0, 2.0);
            let a = nf.forward(&pf.values, &x, &ForwardContext::test()).unwrap();
            let b = nl.forward(&pl, &x, &ForwardContext::test()).unwrap();
            assert!(a.logits.iter().zip(&b.logits).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn lws_band_gap_is_rejected() {
    let spec = NetworkSpec {
        input: [1, 12, 3],
        streams: vec![vec![LayerSpec::Conv(ConvLayerSpec::limited(
            2,
            [3, 3],
            vec![Band { start: 0, width: 5 }, Band { start: 7, width: 5 }],
        ))]],
        trunk: vec![],
        num_classes: 2,
    };
    let err = Network::compile(&spec).unwrap_err().to_string();
    assert!(err.contains("uncovered"), "{err}");
}

#[test]
fn time_pooling_without_overlap_is_rejected() {
    let spec = conv_net(
        ConvLayerSpec::full(2, [3, 2]),
        Some(PoolingSpec::new(PoolKind::Max, 2, 2, PoolAxis::Time)),
        Activation::Relu,
    );
    let err = Network::compile(&spec).unwrap_err().to_string();
    assert!(err.contains("overlapping"), "{err}");
}

fn gn_rig() -> (Network, Vec<f64>, Tensor) {
    let spec = NetworkSpec {
        input: [1, 4, 1],
        streams: vec![vec![LayerSpec::Full { units: 5 }, LayerSpec::relu()]],
        trunk: vec![],
        num_classes: 3,
    };
    let net = Network::compile(&spec).unwrap();
    assert!(net.num_params() <= 50);
    let params = net.init_params(3).values;
    let x = random_tensor(net.input, 9, -1.0, 1.0);
    (net, params, x)
}

#[test]
fn gauss_newton_product_matches_dense_matrix() {
    let (net, params, x) = gn_rig();
    let ctx = ForwardContext::test();
    let g = dense_gauss_newton(&net, &params, &x, &ctx);
    let tape = net.forward(&params, &x, &ctx).unwrap();
    for s in 0..5 {
        let v = random_vec(params.len(), 40 + s, 1.0);
        let gv = net.gauss_newton_example(&params, &v, &tape);
        for (row, got) in g.iter().zip(&gv) {
            assert!((dot(row, &v) - got).abs() < 1e-8);
        }
    }
    let zero = net.gauss_newton_example(&params, &vec![0.0; params.len()], &tape);
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn gauss_newton_is_symmetric_and_psd() {
    let net = Network::compile(&conv_net(
        ConvLayerSpec::full(2, [3, 2]),
        Some(PoolingSpec::new(PoolKind::Max, 2, 1, PoolAxis::Time)),
        Activation::Relu,
    ))
    .unwrap();
    let params = net.init_params(2).values;
    let x = random_tensor(net.input, 1, -1.0, 1.0);
    let tape = net.forward(&params, &x, &ForwardContext::test()).unwrap();
    for s in 0..10 {
        let u = random_vec(params.len(), 2 * s, 1.0);
        let v = random_vec(params.len(), 2 * s + 1, 1.0);
        let gu = net.gauss_newton_example(&params, &u, &tape);
        let gv = net.gauss_newton_example(&params, &v, &tape);
        assert!((dot(&u, &gv) - dot(&v, &gu)).abs() < 1e-8);
        assert!(dot(&v, &gv) >= -1e-8);
    }
}

#[test]
fn stochastic_pooling_selection_frequency() {
    let n = 10_000;
    let hits = (0..n).filter(|&i| sample_index(&[1.0, 3.0], counter_uniform(42, i)).unwrap() == 1).count();
    let sigma = (n as f64 * 0.75 * 0.25).sqrt();
    assert!((hits as f64 - 0.75 * n as f64).abs() < 3.0 * sigma, "{hits}");
}

#[test]
fn pooling_dominance_on_random_regions() {
    for s in 0..200 {
        let r: Vec<f64> = random_vec(5, s, 1.0).iter().map(|v| v.abs()).collect();
        let mx = pool_max(&r).1;
        let mn = r.iter().copied().fold(f64::INFINITY, f64::min);
        let (v, idx) = pool_stochastic(&r, counter_uniform(s, 0), Phase::Train).unwrap();
        assert!(mx >= v && v >= mn);
        assert_eq!(r[idx.unwrap()], v);
        let probs = stochastic_probabilities(&r).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((pool_lp(&r, 100.0, false, false).unwrap() - mx).abs() <= 0.01 * mx);
    }
}

#[test]
fn batch_gradient_is_sum_of_example_gradients() {
    use acnn::features::FrameMatrix;
    use acnn::features::UtteranceFeatures;
    use acnn::par::Exec;
    let rows: Vec<Vec<f64>> = (0..6).map(|t| (0..5).map(|f| ((t * 5 + f) as f64).sin()).collect()).collect();
    let utt = UtteranceFeatures::from_static("u", "s", FrameMatrix::from_rows(&rows).unwrap())
        .unwrap()
        .with_labels(vec![0, 1, 2, 1, 0, 2])
        .unwrap();
    let data = Dataset::new(vec![utt], 1).unwrap();
    let spec = NetworkSpec {
        input: [1, 5, 3],
        streams: vec![vec![LayerSpec::Conv(ConvLayerSpec::full(2, [2, 2])), LayerSpec::relu()]],
        trunk: vec![],
        num_classes: 3,
    };
    let net = Network::compile(&spec).unwrap();
    let params = net.init_params(4).values;
    let frames = data.frames();
    let ctx = BatchContext::test();
    let (loss, g) = net.batch_gradient(&params, &data, &frames[..2], &ctx, Exec::Sequential).unwrap();
    let (l0, g0) = net.example_gradient(&params, &data.input(frames[0]), 0, &ForwardContext::test()).unwrap();
    let (l1, g1) = net.example_gradient(&params, &data.input(frames[1]), 1, &ForwardContext::test()).unwrap();
    assert!((loss - l0 - l1).abs() < 1e-10);
    for i in 0..g.len() {
        assert!((g[i] - g0[i] - g1[i]).abs() < 1e-10);
    }
    let (lp, gp) = net.batch_gradient(&params, &data, &frames, &ctx, Exec::Parallel).unwrap();
    let (ls, gs) = net.batch_gradient(&params, &data, &frames, &ctx, Exec::Sequential).unwrap();
    assert_eq!(lp.to_bits(), ls.to_bits());
    assert!(gp.iter().zip(&gs).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn curvature_with_other_masks_is_refused() {
    use acnn::features::{FrameMatrix, UtteranceFeatures};
    use acnn::par::Exec;
    let rows: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64, 1.0, -1.0]).collect();
    let utt = UtteranceFeatures::from_static("u", "s", FrameMatrix::from_rows(&rows).unwrap())
        .unwrap()
        .with_labels(vec![0, 1, 0, 1])
        .unwrap();
    let data = Dataset::new(vec![utt], 0).unwrap();
    let spec = NetworkSpec {
        input: [1, 3, 1],
        streams: vec![vec![]],
        trunk: vec![LayerSpec::Full { units: 4 }, LayerSpec::relu(), LayerSpec::Dropout { id: 2 }],
        num_classes: 2,
    };
    let net = Network::compile(&spec).unwrap();
    let params = net.init_params(1).values;
    let plan = DropoutPlan::uniform(&[2], 0.5, 9, DropoutMode::FixedPerUtterance);
    let a = vec![plan.utterance_seeds("u", &[1])];
    let b = vec![plan.utterance_seeds("u", &[2])];
    let v = random_vec(params.len(), 1, 1.0);
    let frames = data.frames();
    let ctx_a = BatchContext::train(0).with_masks(&plan, &a);
    let ctx_b = BatchContext::train(0).with_masks(&plan, &b);
    let ga = net.batch_gauss_newton(&params, &v, &data, &frames, &ctx_a, Some(&a), Exec::Sequential).unwrap();
    let ga2 = net.batch_gauss_newton(&params, &v, &data, &frames, &ctx_a, Some(&a), Exec::Sequential).unwrap();
    assert_eq!(ga, ga2);
    let err = net.batch_gauss_newton(&params, &v, &data, &frames, &ctx_b, Some(&a), Exec::Sequential);
    assert!(matches!(err, Err(acnn::Error::MaskMismatch(_))));
}

#[test]
fn forward_is_deterministic_given_context() {
    let spec = conv_net(
        ConvLayerSpec::full(2, [3, 2]),
        Some(PoolingSpec::new(PoolKind::Stochastic, 2, 2, PoolAxis::Frequency)),
        Activation::Relu,
    );
    let net = Network::compile(&spec).unwrap();
    let params = net.init_params(1).values;
    let x = random_tensor(net.input, 1, -1.0, 1.0);
    let ctx = ForwardContext::train(5, 3);
    let a = net.forward(&params, &x, &ctx).unwrap();
    let b = net.forward(&params, &x, &ctx).unwrap();
    assert_eq!(a.probs, b.probs);
    assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}
