//! Datasets, exponential-family GLM likelihoods, prediction functions, and
//! first-order quantities (losses, gradients, per-sample gradients, output
//! Jacobians, generalized residuals).
//!
//! Supported models are linear-Gaussian regression (unit observation
//! variance), binary logistic regression, multiclass softmax regression, and
//! a scalar nonlinear test model `f(x, theta) = sin(theta * x)` with Gaussian
//! likelihood, used to exercise the curvature bounds with a nonzero model
//! curvature.
//!
//! All batch quantities are `1/N` averages. Per-sample loops are associative
//! reductions and run through [`crate::reduce`], so they parallelize
//! deterministically.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce;

/// Prediction task associated with a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
    Multiclass(usize),
}

/// Targets: real-valued for regression, integer class labels otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(DVector<f64>),
    Labels(Vec<usize>),
}

/// A dense supervised dataset with `N` samples of `input_dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    targets: Targets,
    task: Task,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, targets: Targets, task: Task) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidData(
                "dataset needs at least one sample".into(),
            ));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidData(
                "dataset needs at least one feature".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        match (&targets, task) {
            (Targets::Real(y), Task::Regression) => {
                if y.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "dataset targets",
                        expected: n,
                        actual: y.len(),
                    });
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidData("non-finite target value".into()));
                }
            }
            (Targets::Labels(y), Task::Binary) => {
                Self::check_labels(y, n, 2)?;
            }
            (Targets::Labels(y), Task::Multiclass(c)) => {
                if c < 2 {
                    return Err(Error::InvalidData(format!(
                        "multiclass task needs at least 2 classes, got {c}"
                    )));
                }
                Self::check_labels(y, n, c)?;
            }
            _ => {
                return Err(Error::InvalidData(
                    "target kind does not match the task".into(),
                ));
            }
        }
        Ok(Self {
            features,
            targets,
            task,
        })
    }

    fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn real_targets(&self) -> Option<&DVector<f64>> {
        match &self.targets {
            Targets::Real(y) => Some(y),
            Targets::Labels(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(y) => Some(y),
            Targets::Real(_) => None,
        }
    }
}

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `y ~ N(f, 1)` with linear `f`; squared loss `1/2 (y - f)^2`.
    LinearGaussian,
    /// `p(y=1|f) = sigmoid(f)` with linear `f`.
    LinearLogistic,
    /// `p(y=c|f) = softmax(f)_c` with one linear block of parameters per class.
    LinearSoftmax { classes: usize },
    /// `f(x, theta) = sin(theta x)` with unit-variance Gaussian likelihood;
    /// scalar parameter, scalar input, no bias.
    ScalarSine,
}

/// A model: a prediction function family plus its likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub include_bias: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, include_bias: bool) -> Result<Self> {
        if let ModelKind::LinearSoftmax { classes } = kind {
            if classes < 2 {
                return Err(Error::Config(format!(
                    "softmax needs at least 2 classes, got {classes}"
                )));
            }
        }
        if kind == ModelKind::ScalarSine && include_bias {
            return Err(Error::Config(
                "the scalar sine model has a single parameter and no bias".into(),
            ));
        }
        Ok(Self { kind, include_bias })
    }

    /// Number of output coordinates `M` (1, or the class count for softmax).
    pub fn output_dim(&self) -> usize {
        match self.kind {
            ModelKind::LinearSoftmax { classes } => classes,
            _ => 1,
        }
    }

    /// Parameter dimension `D` for a given input dimension.
    pub fn param_dim(&self, input_dim: usize) -> usize {
        let aug = input_dim + usize::from(self.include_bias);
        match self.kind {
            ModelKind::LinearGaussian | ModelKind::LinearLogistic => aug,
            ModelKind::LinearSoftmax { classes } => classes * aug,
            ModelKind::ScalarSine => 1,
        }
    }

    /// Check that the model can be applied to the dataset.
    pub fn check_compat(&self, data: &Dataset) -> Result<()> {
        let ok = match (self.kind, data.task()) {
            (ModelKind::LinearGaussian, Task::Regression) => true,
            (ModelKind::LinearLogistic, Task::Binary) => true,
            (ModelKind::LinearSoftmax { classes }, Task::Multiclass(c)) => classes == c,
            (ModelKind::ScalarSine, Task::Regression) => data.input_dim() == 1,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "{:?} cannot model a {:?} task with {} features",
                self.kind,
                data.task(),
                data.input_dim()
            )))
        }
    }

    pub(crate) fn check_theta(&self, data: &Dataset, theta: &DVector<f64>) -> Result<()> {
        self.check_compat(data)?;
        let d = self.param_dim(data.input_dim());
        if theta.len() != d {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: d,
                actual: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
            });
        }
        Ok(())
    }
}

/// Model outputs and generalized residuals for a whole dataset.
///
/// `outputs` holds `f(x_n, theta)` row-wise (`N x M`); `residual_grad` holds
/// the output-space gradients of the per-sample negative log-likelihood,
/// `d(-log p(y_n | f)) / df` at `f = f_n`, in the same layout.
#[derive(Debug, Clone)]
pub struct PredOutput {
    pub outputs: DMatrix<f64>,
    pub residual_grad: DMatrix<f64>,
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities with max-subtraction.
fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log(sum(exp(logits)))` with max-subtraction.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Bias-augmented feature vector for sample `n`.
pub(crate) fn augmented_row(model: &ModelSpec, data: &Dataset, n: usize) -> DVector<f64> {
    let d_in = data.input_dim();
    let bias = usize::from(model.include_bias);
    let mut x = DVector::zeros(d_in + bias);
    if model.include_bias {
        x[0] = 1.0;
    }
    for j in 0..d_in {
        x[bias + j] = data.features()[(n, j)];
    }
    x
}

/// `j`-th bias-augmented feature of sample `n`, without materializing the
/// augmented row.
#[inline(always)]
pub(crate) fn augmented_entry(include_bias: bool, data: &Dataset, n: usize, j: usize) -> f64 {
    if include_bias {
        if j == 0 {
            1.0
        } else {
            data.features()[(n, j - 1)]
        }
    } else {
        data.features()[(n, j)]
    }
}

/// Scalar model output for the single-output kinds (allocation free).
#[inline]
pub(crate) fn scalar_output(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
) -> f64 {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::LinearLogistic => {
            let bias = usize::from(model.include_bias);
            let mut f = if model.include_bias { theta[0] } else { 0.0 };
            for j in 0..data.input_dim() {
                f += theta[bias + j] * data.features()[(n, j)];
            }
            f
        }
        ModelKind::ScalarSine => (theta[0] * data.features()[(n, 0)]).sin(),
        ModelKind::LinearSoftmax { .. } => unreachable!("softmax has vector outputs"),
    }
}

/// Scalar generalized residual `d(-log p)/df` for the single-output kinds.
#[inline]
pub(crate) fn scalar_residual(model: &ModelSpec, data: &Dataset, f: f64, n: usize) -> f64 {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => {
            f - data.real_targets().expect("regression targets")[n]
        }
        ModelKind::LinearLogistic => sigmoid(f) - data.labels().expect("binary labels")[n] as f64,
        ModelKind::LinearSoftmax { .. } => unreachable!("softmax has vector outputs"),
    }
}

/// Model outputs `f(x_n, theta)` for one sample.
pub(crate) fn outputs_one(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
) -> Vec<f64> {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::LinearLogistic => {
            let x = augmented_row(model, data, n);
            vec![theta.dot(&x)]
        }
        ModelKind::LinearSoftmax { classes } => {
            let x = augmented_row(model, data, n);
            let block = x.len();
            (0..classes)
                .map(|c| theta.rows(c * block, block).dot(&x))
                .collect()
        }
        ModelKind::ScalarSine => vec![(theta[0] * data.features()[(n, 0)]).sin()],
    }
}

/// Per-sample negative log-likelihood given the model outputs.
pub(crate) fn nll_one(model: &ModelSpec, data: &Dataset, f: &[f64], n: usize) -> f64 {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => {
            let y = data.real_targets().expect("regression targets")[n];
            0.5 * (y - f[0]) * (y - f[0])
        }
        ModelKind::LinearLogistic => {
            let y = data.labels().expect("binary labels")[n] as f64;
            softplus(f[0]) - y * f[0]
        }
        ModelKind::LinearSoftmax { .. } => {
            let y = data.labels().expect("class labels")[n];
            log_sum_exp(f) - f[y]
        }
    }
}

/// Output-space gradient of the per-sample negative log-likelihood,
/// `d(-log p(y | f)) / df`, for an arbitrary target.
///
/// For the Gaussian this is `f - y`; for the logistic `sigmoid(f) - y`; for
/// the softmax `softmax(f) - e_y`.
pub(crate) fn residual_grad_for(
    model: &ModelSpec,
    f: &[f64],
    target_real: f64,
    target_label: usize,
) -> Vec<f64> {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => vec![f[0] - target_real],
        ModelKind::LinearLogistic => vec![sigmoid(f[0]) - target_label as f64],
        ModelKind::LinearSoftmax { .. } => {
            let mut g = softmax_probs(f);
            g[target_label] -= 1.0;
            g
        }
    }
}

fn residual_grad_one(model: &ModelSpec, data: &Dataset, f: &[f64], n: usize) -> Vec<f64> {
    match &data.targets {
        Targets::Real(y) => residual_grad_for(model, f, y[n], 0),
        Targets::Labels(y) => residual_grad_for(model, f, 0.0, y[n]),
    }
}

/// Output-space Hessian of the per-sample negative log-likelihood (`M x M`).
///
/// Independent of the target for exponential families: the identity for the
/// Gaussian, `sigmoid(f)(1 - sigmoid(f))` for the logistic, and
/// `diag(pi) - pi pi^T` for the softmax.
pub fn output_hessian(model: &ModelSpec, f: &[f64]) -> DMatrix<f64> {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => DMatrix::from_element(1, 1, 1.0),
        ModelKind::LinearLogistic => {
            let s = sigmoid(f[0]);
            DMatrix::from_element(1, 1, s * (1.0 - s))
        }
        ModelKind::LinearSoftmax { classes } => {
            let pi = softmax_probs(f);
            DMatrix::from_fn(classes, classes, |i, j| {
                let kron = if i == j { pi[i] } else { 0.0 };
                kron - pi[i] * pi[j]
            })
        }
    }
}

/// Evaluate model outputs and generalized residuals for every sample.
pub fn predict(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<PredOutput> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let m = model.output_dim();
    let rows = reduce::indexed_map(n, |i| {
        let f = outputs_one(model, data, theta, i);
        let r = residual_grad_one(model, data, &f, i);
        (f, r)
    });
    let mut outputs = DMatrix::zeros(n, m);
    let mut residual_grad = DMatrix::zeros(n, m);
    for (i, (f, r)) in rows.into_iter().enumerate() {
        for j in 0..m {
            outputs[(i, j)] = f[j];
            residual_grad[(i, j)] = r[j];
        }
    }
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "model outputs",
        });
    }
    Ok(PredOutput {
        outputs,
        residual_grad,
    })
}

/// Average negative log-likelihood `1/N sum_n -log p(y_n | f(x_n, theta))`.
pub fn loss(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let total = match model.kind {
        ModelKind::LinearSoftmax { .. } => reduce::indexed_fold(
            n,
            || 0.0,
            |acc, i| {
                let f = outputs_one(model, data, theta, i);
                acc + nll_one(model, data, &f, i)
            },
            |a, b| a + b,
        ),
        ModelKind::LinearGaussian | ModelKind::ScalarSine => {
            let y = data.real_targets().expect("regression targets");
            reduce::indexed_fold(
                n,
                || 0.0,
                |acc, i| {
                    let r = scalar_output(model, data, theta, i) - y[i];
                    acc + 0.5 * r * r
                },
                |a, b| a + b,
            )
        }
        ModelKind::LinearLogistic => {
            let labels = data.labels().expect("binary labels");
            reduce::indexed_fold(
                n,
                || 0.0,
                |acc, i| {
                    let f = scalar_output(model, data, theta, i);
                    acc + softplus(f) - labels[i] as f64 * f
                },
                |a, b| a + b,
            )
        }
    };
    let value = total / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    Ok(value)
}

/// Per-sample gradient of the (un-averaged) negative log-likelihood for
/// sample `n`, `d(-log p(y_n | f(x_n, theta))) / d theta`.
pub(crate) fn per_sample_gradient_one(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
) -> DVector<f64> {
    let f = outputs_one(model, data, theta, n);
    let r = residual_grad_one(model, data, &f, n);
    per_sample_gradient_from_residual(model, data, theta, n, &r)
}

/// Chain rule `J_n^T r_n` specialized per model.
pub(crate) fn per_sample_gradient_from_residual(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
    residual: &[f64],
) -> DVector<f64> {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::LinearLogistic => {
            augmented_row(model, data, n) * residual[0]
        }
        ModelKind::LinearSoftmax { classes } => {
            let x = augmented_row(model, data, n);
            let block = x.len();
            let mut g = DVector::zeros(classes * block);
            for c in 0..classes {
                for j in 0..block {
                    g[c * block + j] = residual[c] * x[j];
                }
            }
            g
        }
        ModelKind::ScalarSine => {
            let x = data.features()[(n, 0)];
            DVector::from_element(1, residual[0] * x * (theta[0] * x).cos())
        }
    }
}

/// Average gradient of the loss.
pub fn gradient(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let d = theta.len();
    let total = match model.kind {
        ModelKind::LinearSoftmax { .. } => reduce::indexed_fold(
            n,
            || DVector::zeros(d),
            |acc, i| acc + per_sample_gradient_one(model, data, theta, i),
            |a, b| a + b,
        ),
        _ => reduce::indexed_fold(
            n,
            || DVector::zeros(d),
            |mut acc, i| {
                let f = scalar_output(model, data, theta, i);
                let r = scalar_residual(model, data, f, i);
                accumulate_scalar_gradient(model, data, theta, i, r, &mut acc);
                acc
            },
            |a, b| a + b,
        ),
    };
    let g = total / n as f64;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient",
        });
    }
    Ok(g)
}

/// `acc += r * d f / d theta` for the single-output kinds, allocation free.
#[inline]
pub(crate) fn accumulate_scalar_gradient(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
    residual: f64,
    acc: &mut DVector<f64>,
) {
    match model.kind {
        ModelKind::ScalarSine => {
            let x = data.features()[(n, 0)];
            acc[0] += residual * x * (theta[0] * x).cos();
        }
        _ => {
            let bias = usize::from(model.include_bias);
            if model.include_bias {
                acc[0] += residual;
            }
            for j in 0..data.input_dim() {
                acc[bias + j] += residual * data.features()[(n, j)];
            }
        }
    }
}

/// Un-averaged per-sample gradients, one row per sample (`N x D`).
///
/// The row mean equals [`gradient`].
pub fn per_sample_gradients(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let d = theta.len();
    let mut out = DMatrix::zeros(n, d);
    match model.kind {
        ModelKind::LinearSoftmax { .. } => {
            let rows = reduce::indexed_map(n, |i| per_sample_gradient_one(model, data, theta, i));
            for (i, row) in rows.into_iter().enumerate() {
                out.row_mut(i).copy_from(&row.transpose());
            }
        }
        ModelKind::ScalarSine => {
            for i in 0..n {
                let f = scalar_output(model, data, theta, i);
                let r = scalar_residual(model, data, f, i);
                let x = data.features()[(i, 0)];
                out[(i, 0)] = r * x * (theta[0] * x).cos();
            }
        }
        _ => {
            let bias = usize::from(model.include_bias);
            for i in 0..n {
                let f = scalar_output(model, data, theta, i);
                let r = scalar_residual(model, data, f, i);
                if model.include_bias {
                    out[(i, 0)] = r;
                }
                for j in 0..data.input_dim() {
                    out[(i, bias + j)] = r * data.features()[(i, j)];
                }
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "per-sample gradient",
        });
    }
    Ok(out)
}

/// Output Jacobian `D_theta f(x_n, theta)` for one sample (`M x D`).
///
/// Constant in `theta` for the linear models; `x cos(theta x)` for the
/// scalar sine model.
pub fn output_jacobian_one(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
) -> DMatrix<f64> {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::LinearLogistic => {
            let x = augmented_row(model, data, n);
            DMatrix::from_fn(1, x.len(), |_, j| x[j])
        }
        ModelKind::LinearSoftmax { classes } => {
            let x = augmented_row(model, data, n);
            let block = x.len();
            DMatrix::from_fn(classes, classes * block, |c, j| {
                if j / block == c {
                    x[j % block]
                } else {
                    0.0
                }
            })
        }
        ModelKind::ScalarSine => {
            let x = data.features()[(n, 0)];
            DMatrix::from_element(1, 1, x * (theta[0] * x).cos())
        }
    }
}

/// Output Jacobians for every sample.
pub fn output_jacobians(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    model.check_theta(data, theta)?;
    Ok(reduce::indexed_map(data.num_samples(), |n| {
        output_jacobian_one(model, data, theta, n)
    }))
}

/// Hessian of the `m`-th output component with respect to `theta` (`D x D`).
/// Zero for all linear models.
pub(crate) fn output_component_hessian(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    n: usize,
    _m: usize,
) -> Option<DMatrix<f64>> {
    match model.kind {
        ModelKind::ScalarSine => {
            let x = data.features()[(n, 0)];
            Some(DMatrix::from_element(1, 1, -x * x * (theta[0] * x).sin()))
        }
        _ => None,
    }
}

/// Deterministic per-sample RNG: one counter-mode stream per sample index,
/// so draws are independent of thread count and iteration order.
pub(crate) fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// Draw one target from the model's predictive distribution for sample `n`.
pub(crate) fn sample_output_one(
    model: &ModelSpec,
    f: &[f64],
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => {
            let z: f64 = StandardNormal.sample(rng);
            (f[0] + z, 0)
        }
        ModelKind::LinearLogistic => {
            let u: f64 = Uniform::new(0.0, 1.0).unwrap().sample(rng);
            (0.0, usize::from(u < sigmoid(f[0])))
        }
        ModelKind::LinearSoftmax { .. } => {
            let pi = softmax_probs(f);
            let u: f64 = Uniform::new(0.0, 1.0).unwrap().sample(rng);
            let mut acc = 0.0;
            let mut label = pi.len() - 1;
            for (c, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    label = c;
                    break;
                }
            }
            (0.0, label)
        }
    }
}

/// Sample labels `y_n ~ p(y | f(x_n, theta))` from the model's predictive
/// distribution. Deterministic given the seed.
pub fn sample_outputs(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    seed: u64,
) -> Result<Targets> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let draws = reduce::indexed_map(n, |i| {
        let f = outputs_one(model, data, theta, i);
        let mut rng = sample_rng(seed, i);
        sample_output_one(model, &f, &mut rng)
    });
    Ok(match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => {
            Targets::Real(DVector::from_iterator(n, draws.into_iter().map(|d| d.0)))
        }
        _ => Targets::Labels(draws.into_iter().map(|d| d.1).collect()),
    })
}

/// Most likely target under the model's predictive distribution (the mean
/// for the Gaussian, the argmax class otherwise).
pub(crate) fn most_likely_output(model: &ModelSpec, f: &[f64]) -> (f64, usize) {
    match model.kind {
        ModelKind::LinearGaussian | ModelKind::ScalarSine => (f[0], 0),
        ModelKind::LinearLogistic => (0.0, usize::from(sigmoid(f[0]) >= 0.5)),
        ModelKind::LinearSoftmax { .. } => {
            let mut best = 0;
            for (c, &v) in f.iter().enumerate() {
                if v > f[best] {
                    best = c;
                }
            }
            (0.0, best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_regression() -> (ModelSpec, Dataset) {
        let model = ModelSpec::new(ModelKind::LinearGaussian, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            Targets::Real(DVector::from_vec(vec![1.0])),
            Task::Regression,
        )
        .unwrap();
        (model, data)
    }

    #[test]
    fn gaussian_loss_direct_substitution() {
        // 1/2 (2 - 1)^2 with f = 2 theta at theta = 1.
        let (model, data) = tiny_regression();
        let l = loss(&model, &data, &DVector::from_vec(vec![1.0])).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logistic_loss_at_zero_is_log_two() {
        let model = ModelSpec::new(ModelKind::LinearLogistic, true).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(3, 1, &[0.4, -2.0, 7.5]),
            Targets::Labels(vec![0, 1, 1]),
            Task::Binary,
        )
        .unwrap();
        let l = loss(&model, &data, &DVector::zeros(2)).unwrap();
        assert!((l - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let theta = DVector::from_vec(vec![0.5, -1.25]);
        let features = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, -3.0]);
        let y = DVector::from_iterator(4, (0..4).map(|i| 0.5 - 1.25 * features[(i, 0)]));
        let data = Dataset::new(features, Targets::Real(y), Task::Regression).unwrap();
        assert_eq!(loss(&model, &data, &theta).unwrap(), 0.0);
        let g = gradient(&model, &data, &theta).unwrap();
        assert!(g.amax() < 1e-14);
        let rows = per_sample_gradients(&model, &data, &theta).unwrap();
        assert!(rows.amax() < 1e-14);
    }

    #[test]
    fn logistic_gradient_at_zero_has_half_probabilities() {
        let model = ModelSpec::new(ModelKind::LinearLogistic, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -2.0]),
            Targets::Labels(vec![1, 0]),
            Task::Binary,
        )
        .unwrap();
        let g = gradient(&model, &data, &DVector::zeros(2)).unwrap();
        // (1/N) sum (1/2 - y_n) x_n with y = [1, 0], x = [[1, 2], [-1, -2]].
        let expected = DVector::from_vec(vec![
            0.5 * ((0.5 - 1.0) - 0.5),
            0.5 * (2.0 * (0.5 - 1.0) - 2.0 * 0.5),
        ]);
        assert!((g - expected).amax() < 1e-15);
    }

    #[test]
    fn single_sample_row_equals_gradient() {
        let (model, data) = tiny_regression();
        let theta = DVector::from_vec(vec![0.3]);
        let g = gradient(&model, &data, &theta).unwrap();
        let rows = per_sample_gradients(&model, &data, &theta).unwrap();
        assert_eq!(rows.nrows(), 1);
        assert!((rows[(0, 0)] - g[0]).abs() < 1e-15);
    }

    #[test]
    fn linear_jacobian_is_augmented_row() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 2, &[3.0, -1.0]),
            Targets::Real(DVector::from_vec(vec![0.0])),
            Task::Regression,
        )
        .unwrap();
        let theta = DVector::from_vec(vec![9.0, 9.0, 9.0]);
        let jac = output_jacobian_one(&model, &data, &theta, 0);
        assert_eq!(jac.shape(), (1, 3));
        assert_eq!(jac[(0, 0)], 1.0); // bias column comes first
        assert_eq!(jac[(0, 1)], 3.0);
        assert_eq!(jac[(0, 2)], -1.0);
    }

    #[test]
    fn sine_jacobian_at_zero() {
        let model = ModelSpec::new(ModelKind::ScalarSine, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            Targets::Real(DVector::from_vec(vec![0.0])),
            Task::Regression,
        )
        .unwrap();
        let jac = output_jacobian_one(&model, &data, &DVector::zeros(1), 0);
        assert_eq!(jac[(0, 0)], 2.0);
    }

    #[test]
    fn logistic_output_curvature_matches_closed_form() {
        let model = ModelSpec::new(ModelKind::LinearLogistic, false).unwrap();
        let f = [0.7];
        let s = sigmoid(0.7);
        let h = output_hessian(&model, &f);
        assert!((h[(0, 0)] - s * (1.0 - s)).abs() < 1e-15);
        let r = residual_grad_for(&model, &f, 0.0, 1);
        assert!((r[0] - (s - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let model = ModelSpec::new(ModelKind::LinearSoftmax { classes: 3 }, true).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[0.3, -0.9, 40.0, -3.0]),
            Targets::Labels(vec![0, 2]),
            Task::Multiclass(3),
        )
        .unwrap();
        let theta = DVector::from_fn(9, |i, _| (i as f64 * 0.37).sin());
        let pred = predict(&model, &data, &theta).unwrap();
        for i in 0..2 {
            let probs = softmax_probs(pred.outputs.row(i).transpose().as_slice());
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let model = ModelSpec::new(ModelKind::LinearLogistic, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(5, 1, &[0.1, 0.5, -0.3, 2.0, -2.0]),
            Targets::Labels(vec![0, 1, 0, 1, 0]),
            Task::Binary,
        )
        .unwrap();
        let theta = DVector::from_vec(vec![0.8]);
        let a = sample_outputs(&model, &data, &theta, 7).unwrap();
        let b = sample_outputs(&model, &data, &theta, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_theta() {
        let (model, data) = tiny_regression();
        let err = loss(&model, &data, &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let err = loss(&model, &data, &DVector::from_vec(vec![f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn overflowing_loss_is_reported_not_propagated() {
        let (model, data) = tiny_regression();
        let err = loss(&model, &data, &DVector::from_vec(vec![1e200])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(Dataset::new(
            DMatrix::from_row_slice(1, 1, &[f64::INFINITY]),
            Targets::Real(DVector::from_vec(vec![0.0])),
            Task::Regression,
        )
        .is_err());
        assert!(Dataset::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            Targets::Labels(vec![2]),
            Task::Binary,
        )
        .is_err());
    }
}
