//! Shared helpers for the integration suites: seeded random problem
//! instances and small utilities.
//!
//! Each test binary uses its own subset of these.
#![allow(dead_code)]

use curvlab::model::{Dataset, ModelKind, ModelSpec, Targets, Task};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random problem instance for one model kind. Feature scale is roughly
/// standardized, `n <= max_n`, and the parameter dimension stays small.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    kind: ModelKind,
    max_n: usize,
) -> (ModelSpec, Dataset, DVector<f64>) {
    let n = rng.random_range(2..=max_n.max(2));
    match kind {
        ModelKind::LinearGaussian => {
            let d_in = rng.random_range(1..=3);
            let feats: Vec<f64> = (0..n * d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let data = Dataset::new(
                DMatrix::from_row_slice(n, d_in, &feats),
                Targets::Real(DVector::from_vec(ys)),
                Task::Regression,
            )
            .unwrap();
            let model = ModelSpec::new(kind, true).unwrap();
            let theta = random_theta(rng, model.param_dim(d_in));
            (model, data, theta)
        }
        ModelKind::LinearLogistic => {
            let d_in = rng.random_range(1..=3);
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
            let model = ModelSpec::new(kind, true).unwrap();
            let theta = random_theta(rng, model.param_dim(d_in));
            (model, data, theta)
        }
        ModelKind::LinearSoftmax { classes } => {
            let d_in = rng.random_range(1..=2);
            let feats: Vec<f64> = (0..n * d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let data = Dataset::new(
                DMatrix::from_row_slice(n, d_in, &feats),
                Targets::Labels(labels),
                Task::Multiclass(classes),
            )
            .unwrap();
            let model = ModelSpec::new(kind, true).unwrap();
            let theta = random_theta(rng, model.param_dim(d_in));
            (model, data, theta)
        }
        ModelKind::ScalarSine => {
            let theta_true = rng.random_range(-1.5..1.5);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| (theta_true * x).sin() + 0.1 * (rng.random::<f64>() - 0.5))
                .collect();
            let data = Dataset::new(
                DMatrix::from_column_slice(n, 1, &xs),
                Targets::Real(DVector::from_vec(ys)),
                Task::Regression,
            )
            .unwrap();
            let model = ModelSpec::new(kind, false).unwrap();
            let theta = DVector::from_vec(vec![theta_true + rng.random_range(-0.3..0.3)]);
            (model, data, theta)
        }
    }
}

pub fn random_theta(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

/// The three exponential-family GLM kinds.
pub fn glm_kinds() -> [ModelKind; 3] {
    [
        ModelKind::LinearGaussian,
        ModelKind::LinearLogistic,
        ModelKind::LinearSoftmax { classes: 3 },
    ]
}

pub fn rel_vec_err(value: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let denom = reference.norm().max(1e-12);
    (value - reference).norm() / denom
}
