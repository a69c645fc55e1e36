//! Parallel vs. sequential throughput.
//!
//! The `reduce` group compares the two reduction paths directly inside one
//! run on a Gauss-Newton-style accumulation. The op-level groups run under
//! whatever features the bench was compiled with; rerunning with
//! `--no-default-features` benches the sequential fallback against the
//! saved baseline.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use curvlab::curvature::{empirical_fisher, fisher, mc_fisher};
use curvlab::data::{generate, SyntheticGenerator, SyntheticSpec};
use curvlab::experiment::{grid_search, GridConfig, LogGrid};
use curvlab::model::{Dataset, ModelKind, ModelSpec, Targets, Task};
use curvlab::optim::Method;
use curvlab::reduce::{indexed_fold, indexed_fold_seq};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn logistic_instance(n: usize, d_in: usize) -> (ModelSpec, Dataset, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let feats: Vec<f64> = (0..n * d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..n)
        .map(|_| usize::from(rng.random::<f64>() < 0.5))
        .collect();
    let data = Dataset::new(
        DMatrix::from_row_slice(n, d_in, &feats),
        Targets::Labels(labels),
        Task::Binary,
    )
    .unwrap();
    let model = ModelSpec::new(ModelKind::LinearLogistic, true).unwrap();
    let theta = DVector::from_fn(d_in + 1, |i, _| 0.3 * (i as f64).sin());
    (model, data, theta)
}

fn bench_reduce(c: &mut Criterion) {
    let n = 16_384;
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();

    let mut group = c.benchmark_group("reduce_weighted_outer_products");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            indexed_fold(
                n,
                || DMatrix::<f64>::zeros(d, d),
                |mut acc, i| {
                    acc.ger(weights[i], &rows[i], &rows[i], 1.0);
                    acc
                },
                |a, b| a + b,
            )
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            indexed_fold_seq(
                n,
                || DMatrix::<f64>::zeros(d, d),
                |mut acc, i| {
                    acc.ger(weights[i], &rows[i], &rows[i], 1.0);
                    acc
                },
            )
        })
    });
    group.finish();
}

fn bench_curvature(c: &mut Criterion) {
    let (model, data, theta) = logistic_instance(16_384, 16);
    let mut group = c.benchmark_group("curvature_n16384_d17");
    group.bench_function("fisher", |b| {
        b.iter(|| fisher(black_box(&model), black_box(&data), black_box(&theta)).unwrap())
    });
    group.bench_function("empirical_fisher", |b| {
        b.iter(|| empirical_fisher(black_box(&model), black_box(&data), black_box(&theta)).unwrap())
    });
    group.finish();

    let (model, data, theta) = logistic_instance(128, 8);
    c.bench_function("mc_fisher_n128_s256", |b| {
        b.iter(|| mc_fisher(&model, &data, &theta, 256, 7).unwrap())
    });
}

fn bench_grid(c: &mut Criterion) {
    let data = generate(&SyntheticSpec {
        generator: SyntheticGenerator::Fig1Lognormal,
        num_samples: 500,
        seed: 0,
    })
    .unwrap();
    let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
    let grid = GridConfig {
        methods: vec![Method::Ngd, Method::Efgd],
        gamma: LogGrid {
            start: -6.0,
            stop: 2.0,
            num: 9,
        },
        lambda: LogGrid {
            start: -10.0,
            stop: 0.0,
            num: 3,
        },
        iterations: 50,
        seed: 0,
    };
    c.bench_function("grid_search_54_cells", |b| {
        b.iter_batched(
            || DVector::zeros(2),
            |theta0| grid_search(&grid, &model, &data, &theta0).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_reduce, bench_curvature, bench_grid);
criterion_main!(benches);
