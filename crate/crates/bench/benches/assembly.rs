//! Cross-mesh coupling assembly against the same operator on the union
//! mesh: the trade the multi-mesh method makes visible.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use multimesh::assemble::{assemble_matrix, Coeff, Operator};
use multimesh_bench::TwoMeshFixture;

fn bench_coupling(c: &mut Criterion) {
    let f = TwoMeshFixture::build(5, 4).unwrap();
    let mass = Operator::new().mass(Coeff::constant(1.0));
    let stiff = Operator::new().diffusion(Coeff::constant(1.0));

    let mut g = c.benchmark_group("coupling_mass");
    g.sample_size(20);
    g.bench_function("multi_cross_mesh", |b| {
        b.iter(|| {
            assemble_matrix(
                black_box(&mass),
                &f.space_fine,
                &f.fine,
                &f.space_coarse,
                &f.coarse,
            )
            .unwrap()
        })
    });
    g.bench_function("single_union_mesh", |b| {
        b.iter(|| {
            assemble_matrix(
                black_box(&mass),
                &f.space_union,
                &f.union,
                &f.space_union,
                &f.union,
            )
            .unwrap()
        })
    });
    g.finish();

    let mut g = c.benchmark_group("coupling_stiffness");
    g.sample_size(20);
    g.bench_function("multi_cross_mesh", |b| {
        b.iter(|| {
            assemble_matrix(
                black_box(&stiff),
                &f.space_coarse,
                &f.coarse,
                &f.space_fine,
                &f.fine,
            )
            .unwrap()
        })
    });
    g.bench_function("single_union_mesh", |b| {
        b.iter(|| {
            assemble_matrix(
                black_box(&stiff),
                &f.space_union,
                &f.union,
                &f.space_union,
                &f.union,
            )
            .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_coupling);
criterion_main!(benches);
