//! Criterion benchmarks for the hot paths: Gram assembly, the per-pair
//! eigenproblem, conditional-covariance scoring, and a small end-to-end fit.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fsgm_core::ccco::{hybrid_grams_from_sq_distances, score_pair};
use fsgm_core::funcrep::{build_basis, fit_coordinates, node_sq_distances};
use fsgm_core::gsir::{build_pair_grams, solve_gsir};
use fsgm_core::simgen::{gen_model, GridMode, ModelId, ModelSpec};
use fsgm_core::{graph, BandwidthRule, KernelChoice, KernelSpec, PipelineConfig};
use std::hint::black_box;

fn setup(n: usize) -> (fsgm_core::CoordinateSet, fsgm_core::BasisGrid) {
    let spec = ModelSpec {
        model: ModelId::I,
        n,
        grid_mode: GridMode::Balanced,
        m: 10,
        seed: 1,
    };
    let (ds, _) = gen_model(&spec).unwrap();
    let basis = build_basis(&ds, &KernelSpec::brownian()).unwrap();
    let coords = fit_coordinates(&ds, &basis, 0.03).unwrap();
    (coords, basis)
}

fn bench_pair_grams(c: &mut Criterion) {
    let (coords, basis) = setup(100);
    c.bench_function("pair_grams_n100", |b| {
        b.iter(|| {
            build_pair_grams(
                black_box(&coords),
                &basis,
                (0, 1),
                &KernelChoice::default(),
                BandwidthRule::InverseMedian,
            )
            .unwrap()
        })
    });
}

fn bench_gsir(c: &mut Criterion) {
    let (coords, basis) = setup(100);
    let grams = build_pair_grams(
        &coords,
        &basis,
        (0, 1),
        &KernelChoice::default(),
        BandwidthRule::InverseMedian,
    )
    .unwrap();
    c.bench_function("solve_gsir_n100_d2", |b| {
        b.iter(|| solve_gsir(black_box(&grams), 2, 0.03).unwrap())
    });
}

fn bench_score(c: &mut Criterion) {
    let (coords, basis) = setup(100);
    let grams = build_pair_grams(
        &coords,
        &basis,
        (0, 1),
        &KernelChoice::default(),
        BandwidthRule::InverseMedian,
    )
    .unwrap();
    let predictors = solve_gsir(&grams, 2, 0.03).unwrap();
    let d2_i = node_sq_distances(&coords, &basis, 0);
    let d2_j = node_sq_distances(&coords, &basis, 1);
    let hybrids = hybrid_grams_from_sq_distances(
        &d2_i,
        &d2_j,
        &predictors,
        &KernelChoice::default(),
        BandwidthRule::InverseMedian,
        true,
    )
    .unwrap();
    c.bench_function("score_pair_n100", |b| {
        b.iter_batched(
            || hybrids.clone(),
            |h| score_pair(black_box(&h), 0.01, false).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_fit(c: &mut Criterion) {
    let spec = ModelSpec {
        model: ModelId::III,
        n: 50,
        grid_mode: GridMode::Balanced,
        m: 10,
        seed: 2,
    };
    let (ds, _) = gen_model(&spec).unwrap();
    let cfg = PipelineConfig { threads: Some(1), ..PipelineConfig::default() };
    let mut group = c.benchmark_group("fit");
    group.sample_size(20);
    group.bench_function("model_iii_n50_p5", |b| {
        b.iter(|| graph::fit(black_box(&ds), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_pair_grams, bench_gsir, bench_score, bench_fit);
criterion_main!(benches);
