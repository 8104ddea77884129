//! Parallel versus sequential solvers.
//!
//! Run once per build and compare the `parallel` and `sequential` ids:
//!
//! ```text
//! cargo bench -p condot
//! cargo bench -p condot --no-default-features
//! ```
//!
//! The parallel build also reports a single-thread pool, which isolates the
//! rayon overhead from the speedup.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use std::hint::black_box;

use condot::measures::random_joint_instance;
use condot::nn::{TrainingBatch, VelocityModel};
use condot::ot::{conditional_wasserstein, cost_matrix};
use condot::sinkhorn::{default_epsilon, sinkhorn_divergence};
use condot::{par, rng, CostSpec};

fn modes() -> Vec<(&'static str, Option<usize>)> {
    if par::is_parallel() {
        vec![("parallel", None), ("parallel-1-thread", Some(1))]
    } else {
        vec![("sequential", None)]
    }
}

fn bench_cost_matrix(c: &mut Criterion) {
    let (mu, nu) = random_joint_instance(1, 2, 5, 20, 50).unwrap();
    let spec = CostSpec::relaxed(2.0, 10.0);
    let mut g = c.benchmark_group("cost_matrix_1000");
    for (mode, jobs) in modes() {
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| par::with_jobs(jobs, || cost_matrix(black_box(&mu), black_box(&nu), &spec).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn bench_sinkhorn(c: &mut Criterion) {
    let (mu, nu) = random_joint_instance(2, 1, 2, 10, 30).unwrap();
    let spec = CostSpec::relaxed(2.0, 5.0);
    let eps = 10.0 * default_epsilon(&mu, &nu, &spec).unwrap();
    let mut g = c.benchmark_group("sinkhorn_divergence_300");
    g.sample_size(10);
    for (mode, jobs) in modes() {
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| par::with_jobs(jobs, || sinkhorn_divergence(black_box(&mu), black_box(&nu), &spec, eps).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn bench_conditional(c: &mut Criterion) {
    let (mu, nu) = random_joint_instance(3, 1, 3, 50, 20).unwrap();
    let mut g = c.benchmark_group("conditional_wasserstein_50x20");
    g.sample_size(20);
    for (mode, jobs) in modes() {
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| par::with_jobs(jobs, || conditional_wasserstein(black_box(&mu), black_box(&nu), 2.0, 1e-9).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn bench_network(c: &mut Criterion) {
    let model = VelocityModel::new_random_output(5, 5, &VelocityModel::default_hidden(), 4).unwrap();
    let n = 100;
    let mut r = rng::seeded(5);
    let mut mat = |w: usize| Array2::from_shape_vec((n, w), rng::standard_normal(&mut r, n * w)).unwrap();
    let (y, x, target) = (mat(5), mat(5), mat(5));
    let batch = TrainingBatch { t: (0..n).map(|i| i as f64 / n as f64).collect(), y, x, target };
    let mut g = c.benchmark_group("loss_and_grad_batch100");
    g.sample_size(20);
    for (mode, jobs) in modes() {
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| par::with_jobs(jobs, || model.loss_and_grad(black_box(&batch)).unwrap()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_cost_matrix, bench_sinkhorn, bench_conditional, bench_network);
criterion_main!(benches);
