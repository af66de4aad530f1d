use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use mspde_bench::{first_slab, nls_discretisation, wave_discretisation};
use mspde_core::operator::GOperator;
use mspde_core::{uniform_partition, Continuity, SchemeVariant, SpatialSpace};

fn g_operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("g_apply");
    for p in 1..=3 {
        let space = SpatialSpace::new(uniform_partition(40.0, 100, true).unwrap(), p, Continuity::Discontinuous).unwrap();
        let g = GOperator::new(&space).unwrap();
        let u: Vec<f64> = (0..space.dof_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(p), &u, |b, u| b.iter(|| g.apply(black_box(u))));
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("nls_assembly_q1_p2");
    for variant in [SchemeVariant::CgPrimary, SchemeVariant::DgPrimary] {
        let disc = nls_discretisation(variant, 1, 2);
        let (slab, z, _) = first_slab(&disc);
        group.bench_function(BenchmarkId::new("residual", variant), |b| {
            b.iter(|| disc.assemble_residual(&slab, black_box(&z), None).unwrap())
        });
        group.bench_function(BenchmarkId::new("jacobian", variant), |b| {
            b.iter(|| disc.assemble_jacobian(&slab, black_box(&z), None).unwrap())
        });
        let jac = disc.assemble_jacobian(&slab, &z, None).unwrap();
        group.bench_function(BenchmarkId::new("banded_lu", variant), |b| {
            b.iter_batched(|| jac.clone(), |m| m.factor().unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

fn slab_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("newton_slab");
    group.sample_size(20);
    for variant in SchemeVariant::ALL {
        let disc = wave_discretisation(variant, 1, 1);
        let (slab, z, aux) = first_slab(&disc);
        group.bench_function(BenchmarkId::new("nonlinear_wave_q1_p1", variant), |b| {
            b.iter(|| disc.newton_solve(&slab, z.clone(), aux.clone()).unwrap())
        });
    }
    for variant in [SchemeVariant::CgPrimary, SchemeVariant::DgPrimary] {
        let disc = nls_discretisation(variant, 1, 2);
        let (slab, z, aux) = first_slab(&disc);
        group.bench_function(BenchmarkId::new("nls_q1_p2", variant), |b| {
            b.iter(|| disc.newton_solve(&slab, z.clone(), aux.clone()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, g_operator, assembly, slab_solve);
criterion_main!(benches);
