use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use odm_core::model::{adam_step, backward, AdamState, AutoencoderParams, ModelDims, TrainConfig};
use odm_core::telemetry::{DownsampleConfig, Metric, NodeDownsampler, RawSample};
use odm_core::window::{build_windows, overlap_average, Window};

fn default_model() -> AutoencoderParams {
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    AutoencoderParams::init(&ModelDims::default(), 4, &cfg)
}

fn random_windows(n: usize, w: usize, dim: usize, seed: u64) -> Vec<Window> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Window {
            start: 0,
            rows: (0..w)
                .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
        })
        .collect()
}

fn bench_forward(c: &mut Criterion) {
    let model = default_model();
    let windows = random_windows(1, 4, 5, 3);
    c.bench_function("forward_default_window", |b| {
        b.iter(|| model.forward(black_box(&windows[0])).unwrap())
    });
}

fn bench_backward_batch(c: &mut Criterion) {
    let model = default_model();
    let windows = random_windows(32, 4, 5, 4);
    let refs: Vec<&Window> = windows.iter().collect();
    let mut group = c.benchmark_group("backward");
    group.throughput(Throughput::Elements(32));
    group.bench_function("batch32_sequential", |b| {
        b.iter(|| backward(black_box(&model), &refs, false).unwrap())
    });
    group.bench_function("batch32_parallel", |b| {
        b.iter(|| backward(black_box(&model), &refs, true).unwrap())
    });
    group.finish();
}

fn bench_adam(c: &mut Criterion) {
    let model = default_model();
    let windows = random_windows(8, 4, 5, 5);
    let refs: Vec<&Window> = windows.iter().collect();
    let (grads, _) = backward(&model, &refs, false).unwrap();
    let cfg = TrainConfig::default();
    c.bench_function("adam_step_default_dims", |b| {
        b.iter_batched(
            || (model.clone(), AdamState::zeros_like(&model)),
            |(mut m, mut s)| adam_step(&mut m, &grads, &mut s, &cfg),
            BatchSize::SmallInput,
        )
    });
}

fn bench_downsampler(c: &mut Criterion) {
    let samples: Vec<RawSample> = (0..10_000u64)
        .flat_map(|t| {
            Metric::ALL.into_iter().map(move |m| RawSample {
                timestamp: t as f64,
                node_id: "n0".into(),
                metric: m,
                value: (t as f64 * 0.1).sin() * 50.0 + 100.0,
            })
        })
        .collect();
    let mut group = c.benchmark_group("downsample");
    group.throughput(Throughput::Elements(samples.len() as u64));
    group.bench_function("stream_50k_samples", |b| {
        b.iter(|| {
            let mut ds = NodeDownsampler::new("n0", DownsampleConfig::default());
            let mut rows = 0usize;
            for s in &samples {
                rows += ds.push(black_box(s)).unwrap().len();
            }
            rows + ds.finish().len()
        })
    });
    group.finish();
}

fn bench_overlap_average(c: &mut Criterion) {
    let rows: Vec<Vec<f64>> = (0..1_000)
        .map(|i| (0..5).map(|d| ((i * 5 + d) as f64 * 0.01).sin()).collect())
        .collect();
    let recons: Vec<(usize, Vec<Vec<f64>>)> = build_windows(&rows, 4, 1)
        .into_iter()
        .map(|w| (w.start, w.rows))
        .collect();
    c.bench_function("overlap_average_1000x5_w4", |b| {
        b.iter(|| overlap_average(black_box(&recons), 1_000, 5))
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_backward_batch,
    bench_adam,
    bench_downsampler,
    bench_overlap_average
);
criterion_main!(benches);
