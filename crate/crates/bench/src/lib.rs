//! Benchmark bodies shared by the criterion entry point.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use panoptic_core::synth::rng::XorShift64Star;
use panoptic_core::{
    generate_scene, hungarian, merge, pq, CostMatrix, MergeParams, SceneParams, Strategy, Taxonomy,
};

pub fn merging(c: &mut Criterion) {
    let taxonomy = Taxonomy::synthetic_default();
    let params = SceneParams {
        seed: 11,
        height: 256,
        width: 256,
        n_things: 30,
        stuff_bands: 3,
        noise_sigma: 0.2,
        pad_to: Some(100),
        ..SceneParams::default()
    };
    let scene = generate_scene(&params, &taxonomy).expect("scene");
    let mut group = c.benchmark_group("merge_256x256_100");
    for strategy in Strategy::ALL {
        let mp = MergeParams { merge_same_stuff: strategy.merges_stuff_by_default(), ..MergeParams::default() };
        group.bench_with_input(BenchmarkId::from_parameter(strategy), &strategy, |b, &s| {
            b.iter(|| merge(black_box(&scene.stack), &taxonomy, s, &mp))
        });
    }
    group.finish();
}

pub fn assignment(c: &mut Criterion) {
    let mut rng = XorShift64Star::new(3);
    let mut group = c.benchmark_group("hungarian");
    for (rows, cols) in [(100, 20), (300, 50)] {
        let costs = CostMatrix::from_fn(rows, cols, |_, _| rng.next_f64()).expect("finite");
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}")), &costs, |b, m| {
            b.iter(|| hungarian(black_box(m)))
        });
    }
    group.finish();
}

pub fn evaluation(c: &mut Criterion) {
    let taxonomy = Taxonomy::synthetic_default();
    let scene = generate_scene(&SceneParams { seed: 5, height: 256, width: 256, n_things: 30, ..SceneParams::default() }, &taxonomy)
        .expect("scene");
    let pred = merge(&scene.stack, &taxonomy, Strategy::MaskWise, &MergeParams::default());
    c.bench_function("pq_256x256", |b| b.iter(|| pq(black_box(&pred), &scene.gt, &taxonomy)));
}

pub fn benchmarks(c: &mut Criterion) {
    merging(c);
    assignment(c);
    evaluation(c);
}
