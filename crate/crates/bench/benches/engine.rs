use std::hint::black_box;

use anoco::graph::edge_weights;
use anoco::metrics::{auroc, pro, ProConfig};
use anoco::retrieval::{assign_from_similarities, SimilarityIndex};
use anoco::solver::{solve_anchored, AnchorConfig};
use anoco::tensor_io::{FeatureGrid, Mask, ReferencePool};
use anoco::{MapConfig, PipelineConfig, Scorer};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(0.0f32..1.0))
}

// 48x48 at dim 1024 is the production shape; the smaller sizes keep the sweep short.
const SIZES: [(usize, usize); 3] = [(16, 256), (32, 512), (48, 1024)];

fn retrieval(c: &mut Criterion) {
    let mut g = c.benchmark_group("retrieval");
    g.sample_size(10);
    for (side, dim) in SIZES {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = side * side;
        let pool = ReferencePool::new(random(n, dim, &mut rng), "r").unwrap();
        let index = SimilarityIndex::new(&pool);
        let q = random(n, dim, &mut rng);
        g.bench_with_input(BenchmarkId::new("similarities", n), &q, |b, q| {
            b.iter(|| index.similarities(q.view()).unwrap())
        });
        let s = index.similarities(q.view()).unwrap();
        g.bench_with_input(BenchmarkId::new("assign", n), &s, |b, s| {
            b.iter(|| assign_from_similarities(s.view(), &index).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (side, dim) in SIZES {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = side * side;
        let refs = random(n, dim, &mut rng);
        let q = random(n, dim, &mut rng);
        let pool = ReferencePool::new(refs.clone(), "r").unwrap();
        let index = SimilarityIndex::new(&pool);
        let s = index.similarities(q.view()).unwrap();
        let a = assign_from_similarities(s.view(), &index).unwrap();
        let graph = edge_weights(q.view(), refs.view(), &a).unwrap();
        let cfg = AnchorConfig::default();
        g.bench_function(BenchmarkId::new("edge_weights", n), |b| {
            b.iter(|| edge_weights(q.view(), refs.view(), &a).unwrap())
        });
        g.bench_function(BenchmarkId::new("closed_form", n), |b| {
            b.iter(|| solve_anchored(q.view(), refs.view(), &graph, &cfg).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    let (side, dim) = (48, 1024);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = FeatureGrid::new("ref", side, side, random(side * side, dim, &mut rng)).unwrap();
    let query = FeatureGrid::new("q", side, side, random(side * side, dim, &mut rng)).unwrap();
    let pool = ReferencePool::from_grids(&[reference]).unwrap();
    let scorer = Scorer::new(pool, PipelineConfig::default()).unwrap();
    let map = MapConfig::new((224, 224));
    g.bench_function("score_48x48_d1024", |b| b.iter(|| scorer.score(black_box(&query), &map).unwrap()));
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
    g.bench_function("auroc_10k", |b| b.iter(|| auroc(&scores, &labels).unwrap()));

    let maps: Vec<Array2<f32>> = (0..16)
        .map(|_| Array2::from_shape_fn((128, 128), |_| rng.random::<f32>()))
        .collect();
    let masks: Vec<Mask> = (0..16)
        .map(|i| Mask(Array2::from_shape_fn((128, 128), |(y, x)| u8::from(i % 2 == 0 && y / 32 == x / 32))))
        .collect();
    let cfg = ProConfig::default();
    g.sample_size(10);
    g.bench_function("pro_16x128x128", |b| b.iter(|| pro(&maps, &masks, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, retrieval, solve, pipeline, metrics);
criterion_main!(benches);
