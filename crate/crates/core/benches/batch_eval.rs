//! Sequential versus data-parallel execution of the batch hot paths.

use std::hint::black_box;
use std::time::Duration;

use acnn::adaptation::{train_diag_gmm, GmmTrainOptions};
use acnn::features::{FrameMatrix, UtteranceFeatures};
use acnn::network::*;
use acnn::par::Exec;
use acnn::rng::KeyedRng;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_frames(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = KeyedRng::from_parts(&[seed]);
    (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

fn dataset(utts: usize, frames: usize, dim: usize, classes: usize) -> Dataset {
    let out = (0..utts)
        .map(|u| {
            let rows = random_frames(frames, dim, u as u64);
            let labels = (0..frames).map(|t| (t % classes) as u32).collect();
            UtteranceFeatures::from_static(format!("u{u}"), "s", FrameMatrix::from_rows(&rows).unwrap())
                .unwrap()
                .with_labels(labels)
                .unwrap()
        })
        .collect();
    Dataset::new(out, 2).unwrap()
}

fn batch_gradient(c: &mut Criterion) {
    let data = dataset(4, 100, 15, 6);
    let spec = NetworkSpec {
        input: [1, 15, 5],
        streams: vec![vec![
            LayerSpec::Conv(ConvLayerSpec::full(8, [5, 3])),
            LayerSpec::relu(),
            LayerSpec::Pool(PoolingSpec::new(PoolKind::Max, 2, 2, PoolAxis::Frequency)),
        ]],
        trunk: vec![LayerSpec::Full { units: 64 }, LayerSpec::relu()],
        num_classes: 6,
    };
    let net = Network::compile(&spec).unwrap();
    let params = net.init_params(1).values;
    let frames = data.frames();
    let ctx = BatchContext::test();
    let mut group = c.benchmark_group("batch_gradient");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(net.batch_gradient(&params, &data, &frames, &ctx, exec).unwrap()))
        });
    }
    group.finish();
}

fn gmm_em(c: &mut Criterion) {
    let frames = random_frames(2000, 15, 7);
    let mut group = c.benchmark_group("gmm_em_iteration");
    for (name, exec) in MODES {
        let opts = GmmTrainOptions { components: 16, iterations: 1, seed: 3, exec };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| black_box(train_diag_gmm(&frames, opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = batch_gradient, gmm_em
}
criterion_main!(benches);
