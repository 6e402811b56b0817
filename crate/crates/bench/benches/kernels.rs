use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pointclu_bench::sample_cloud;
use pointclu_core::clustering::{sinkhorn_assign, SinkhornConfig};
use pointclu_core::harness::{Model, TrainConfig, Trainer};
use pointclu_core::pointcloud::{farthest_point_sample, knn};

fn geometry(c: &mut Criterion) {
    let mut g = c.benchmark_group("geometry");
    for h in [1024, 4096] {
        let pts = sample_cloud(h, 1).points().to_vec();
        g.bench_with_input(BenchmarkId::new("fps_64", h), &pts, |b, pts| {
            b.iter(|| farthest_point_sample(black_box(pts), 64, 0).unwrap())
        });
        let centers: Vec<[f64; 3]> = farthest_point_sample(&pts, 64, 0)
            .unwrap()
            .into_iter()
            .map(|i| pts[i])
            .collect();
        g.bench_with_input(BenchmarkId::new("knn_64x32", h), &pts, |b, pts| {
            b.iter(|| knn(black_box(&centers), black_box(pts), 32).unwrap())
        });
    }
    g.finish();
}

fn transport(c: &mut Criterion) {
    let pts = sample_cloud(64, 2).points().to_vec();
    let targets = sample_cloud(8, 3).points().to_vec();
    let mut g = c.benchmark_group("sinkhorn_64x8");
    for (name, anneal) in [("scaled", Some(0.9)), ("plain", None)] {
        let cfg = SinkhornConfig {
            anneal,
            ..SinkhornConfig::default()
        };
        g.bench_function(name, |b| b.iter(|| sinkhorn_assign(black_box(&pts), black_box(&targets), &cfg).unwrap()));
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let cfg = TrainConfig {
        batch_size: 2,
        steps: Some(1000),
        ..TrainConfig::default()
    };
    let batch: Vec<_> = (0..2).map(|s| sample_cloud(cfg.points_per_cloud, s)).collect();
    let mut trainer = Trainer::new(Model::new(&cfg).unwrap(), 1000);
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("desk_step_batch2", |b| {
        b.iter(|| trainer.train_step(black_box(&batch), 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, geometry, transport, training);
criterion_main!(benches);
