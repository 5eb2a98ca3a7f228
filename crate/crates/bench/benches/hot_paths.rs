use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypodens_bench::{heisenberg_kde, quadratic_map};
use hypodens_core::decomp::{eta_constants, local_inverse};
use hypodens_core::fields::{aniso_norm, builtin_model, directional_matrix, scale_matrix};
use hypodens_core::rng::path_rng;
use hypodens_core::sde::integrate_endpoint;
use nalgebra::DVector;

fn norm(c: &mut Criterion) {
    let m = builtin_model("heisenberg").unwrap();
    let y = DVector::from_vec(vec![0.3, -0.1, 1.0]);
    c.bench_function("aniso_norm/heisenberg", |b| {
        b.iter(|| {
            let a = directional_matrix(&m, 0.0, black_box(&[0.1, 0.2, 0.0])).unwrap();
            aniso_norm(&scale_matrix(&a, 0.01).unwrap(), black_box(&y)).unwrap()
        })
    });
}

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("endpoint");
    for name in ["heisenberg", "grushin"] {
        let m = builtin_model(name).unwrap();
        let x0 = vec![0.0; hypodens_core::fields::VectorFieldModel::dim(&m)];
        for steps in [64usize, 256] {
            group.bench_with_input(BenchmarkId::new(name, steps), &steps, |b, &steps| {
                let mut idx = 0;
                b.iter(|| {
                    idx += 1;
                    integrate_endpoint(&m, &x0, &mut path_rng(1, idx), 0.1, steps).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn kde(c: &mut Criterion) {
    let mut group = c.benchmark_group("kde_evaluate");
    for n in [10_000u64, 100_000] {
        let est = heisenberg_kde(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &est, |b, est| {
            b.iter(|| est.evaluate(black_box(&[0.2, -0.1, 0.3])))
        });
    }
    group.finish();
}

fn inverse(c: &mut Criterion) {
    let eta = quadratic_map();
    let h = eta_constants(&eta, 0.0).unwrap().h_eta;
    let y = DVector::from_element(4, 0.2 * h);
    c.bench_function("local_inverse/m4", |b| b.iter(|| local_inverse(&eta, black_box(&y)).unwrap()));
}

criterion_group!(benches, norm, sampling, kde, inverse);
criterion_main!(benches);
