//! Encoding, one training epoch and ensemble fitting on a single-thread rayon
//! pool versus the default pool. Build with `--no-default-features` to
//! measure the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ecgnd_core::cae::{build_model, train, CaeConfig, TrainConfig};
use ecgnd_core::detect::fit_ensemble;
use ecgnd_core::synth::{make_benchmark_with, BenchmarkSpec};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut v = vec![("threads=1".to_string(), single)];
    if n > 1 {
        v.push((format!("threads={n}"), default));
    }
    v
}

fn bench(c: &mut Criterion) {
    let spec = BenchmarkSpec::default().with_sizes([256, 16, 16]);
    let (l1, _, _) = make_benchmark_with(&spec, 0).unwrap();
    let data = l1.normalized();
    let model = build_model(&CaeConfig::new(data.window_len())).unwrap();
    let features = model.encode_dataset(&data).unwrap();
    let one_epoch = TrainConfig { epochs: 1, ..TrainConfig::default() };

    let mut g = c.benchmark_group("throughput");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("encode_256", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| model.encode_dataset(&data).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("train_epoch_256", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| train(&model, &data, &data, &one_epoch).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("fit_ensemble_k1_5", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| fit_ensemble(&features, &[1, 2, 3, 4, 5], 0, 1e-6).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
