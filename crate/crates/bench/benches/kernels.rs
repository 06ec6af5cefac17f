use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mrlod_bench::{cold_cache, fixture, level_blocks};
use mrlod_core::corrector::{CorrectorProblem, Oversampling};
use mrlod_core::mesh::ElementId;
use mrlod_core::multires::{build_level_basis, BasisVariant};
use mrlod_core::solver::{gmres, GmresConfig, SparseLu};

fn bench_gmres(c: &mut Criterion) {
    let blocks = level_blocks(0.125, 3, 1.0 / 64.0, 8.0, 2);
    let mut group = c.benchmark_group("gmres_level_block");
    for b in blocks.iter().skip(1) {
        group.bench_with_input(BenchmarkId::from_parameter(b.level), b, |bench, b| {
            bench.iter(|| gmres(|x, y| b.matrix.mul_vec_into(x, y), black_box(&b.rhs), &GmresConfig::default(), None).unwrap())
        });
    }
    group.finish();
}

fn bench_saddle_lu(c: &mut Criterion) {
    let (disc, _) = fixture(0.125, 1, 1.0 / 64.0, 4.0);
    let mut group = c.benchmark_group("saddle_lu");
    for m in [1usize, 2, 3] {
        let p = CorrectorProblem::new(&disc, ElementId::new(1, 3, 3), Oversampling::Finite(m)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &p, |bench, p| {
            bench.iter(|| SparseLu::factor(black_box(p.saddle_matrix())).unwrap())
        });
    }
    group.finish();
}

fn bench_level_basis(c: &mut Criterion) {
    let (disc, transfers) = fixture(0.125, 2, 1.0 / 64.0, 4.0);
    let mut group = c.benchmark_group("level_basis");
    group.sample_size(10);
    for level in [1usize, 2] {
        group.bench_with_input(BenchmarkId::from_parameter(level), &level, |bench, &level| {
            bench.iter(|| {
                build_level_basis(&disc, transfers.level(level), BasisVariant::Stabilized, Oversampling::Finite(2), &cold_cache())
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gmres, bench_saddle_lu, bench_level_basis);
criterion_main!(benches);
