//! Curvature matrices for GLM losses: Fisher information, empirical Fisher,
//! generalized Gauss-Newton matrices under explicit splits, the exact
//! Hessian, Monte Carlo Fisher estimates, the spectral-norm error bound for
//! the Gauss-Newton approximation, split-validity checks, and
//! variance-adaptation matrices.
//!
//! Every matrix uses the `1/N` averaging convention; multiply by `N` to
//! recover sum-convention quantities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelKind, ModelSpec};
use crate::reduce;

/// Which split `loss = sum_n a_n(b_n(theta))` defines a Gauss-Newton matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GgnSplit {
    /// `a_n(b) = -log p(y_n | b)`, `b_n(theta) = f(x_n, theta)`. Under this
    /// split the GGN equals the Fisher for exponential-family likelihoods.
    Canonical,
    /// `a_n(b) = -log b`, `b_n(theta) = p(y_n | f(x_n, theta))`. Produces
    /// exactly the empirical Fisher.
    EfSplit,
    /// `b_n(theta) = theta`, so all curvature stays in `a_n`; the GGN equals
    /// the Hessian.
    Trivial,
}

impl GgnSplit {
    pub fn name(&self) -> &'static str {
        match self {
            GgnSplit::Canonical => "canonical",
            GgnSplit::EfSplit => "ef",
            GgnSplit::Trivial => "trivial",
        }
    }
}

/// Identifies how a curvature matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureKind {
    Fisher,
    EmpiricalFisher,
    Ggn(GgnSplit),
    Hessian,
    McFisher { seed: u64, samples: usize },
}

impl CurvatureKind {
    pub fn label(&self) -> &'static str {
        match self {
            CurvatureKind::Fisher => "fisher",
            CurvatureKind::EmpiricalFisher => "empirical_fisher",
            CurvatureKind::Ggn(GgnSplit::Canonical) => "ggn_canonical",
            CurvatureKind::Ggn(GgnSplit::EfSplit) => "ggn_ef",
            CurvatureKind::Ggn(GgnSplit::Trivial) => "ggn_trivial",
            CurvatureKind::Hessian => "hessian",
            CurvatureKind::McFisher { .. } => "mc_fisher",
        }
    }
}

/// A symmetric `D x D` curvature matrix tagged with its kind.
#[derive(Debug, Clone)]
pub struct CurvatureMatrix {
    pub values: DMatrix<f64>,
    pub kind: CurvatureKind,
}

impl CurvatureMatrix {
    /// Normalization convention shared by every matrix in this module.
    pub const CONVENTION: &'static str = "averaged (1/N)";

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Spectral norm via full symmetric eigendecomposition.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.values)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.norm()
    }

    /// Largest absolute asymmetry `|A - A^T|_max`.
    pub fn asymmetry(&self) -> f64 {
        (&self.values - self.values.transpose()).amax()
    }
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Solve `(A + lambda I) x = rhs` through a symmetric (Cholesky)
/// factorization. No explicit inverse is formed. Fails with a singularity
/// error when the damped matrix is not positive definite.
pub fn solve_damped(
    a: &DMatrix<f64>,
    lambda: f64,
    rhs: &DVector<f64>,
    context: &'static str,
) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::Config("damping must be non-negative".into()));
    }
    let mut damped = a.clone();
    for i in 0..damped.nrows() {
        damped[(i, i)] += lambda;
    }
    match damped.cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(Error::Singular { context, lambda }),
    }
}

fn sum_matrices(
    n: usize,
    d: usize,
    per_sample: impl Fn(usize, &mut DMatrix<f64>) + Sync,
) -> DMatrix<f64> {
    reduce::indexed_fold(
        n,
        || DMatrix::zeros(d, d),
        |mut acc, i| {
            per_sample(i, &mut acc);
            acc
        },
        |a, b| a + b,
    )
}

/// `acc += w * x~ x~^T` where `x~` is the bias-augmented feature row of
/// sample `i`, without materializing the row.
#[inline]
fn accumulate_weighted_outer(
    model: &ModelSpec,
    data: &Dataset,
    i: usize,
    w: f64,
    acc: &mut DMatrix<f64>,
) {
    let d = acc.nrows();
    let bias = model.include_bias;
    for a in 0..d {
        let xa = model::augmented_entry(bias, data, i, a);
        let wa = w * xa;
        for b in 0..d {
            acc[(a, b)] += wa * model::augmented_entry(bias, data, i, b);
        }
    }
}

/// Exact Fisher information matrix, `1/N sum_n J_n^T H_n J_n` with the
/// closed-form output curvature `H_n` of each likelihood. No sampling.
pub fn fisher(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<CurvatureMatrix> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    let values = match model.kind {
        ModelKind::LinearGaussian => sum_matrices(n, d, |i, acc| {
            accumulate_weighted_outer(model, data, i, 1.0, acc);
        }),
        ModelKind::LinearLogistic => sum_matrices(n, d, |i, acc| {
            let f = model::scalar_output(model, data, theta, i);
            let h = model::output_hessian(model, &[f]);
            accumulate_weighted_outer(model, data, i, h[(0, 0)], acc);
        }),
        ModelKind::LinearSoftmax { classes } => {
            // Block (c, c') is (delta_cc' pi_c - pi_c pi_c') x x^T.
            let block = d / classes;
            sum_matrices(n, d, |i, acc| {
                let x = model::augmented_row(model, data, i);
                let f = model::outputs_one(model, data, theta, i);
                let h = model::output_hessian(model, &f);
                for c in 0..classes {
                    for cp in 0..classes {
                        let w = h[(c, cp)];
                        for a in 0..block {
                            for b in 0..block {
                                acc[(c * block + a, cp * block + b)] += w * x[a] * x[b];
                            }
                        }
                    }
                }
            })
        }
        ModelKind::ScalarSine => sum_matrices(n, d, |i, acc| {
            let x = data.features()[(i, 0)];
            let j = x * (theta[0] * x).cos();
            acc[(0, 0)] += j * j;
        }),
    };
    Ok(CurvatureMatrix {
        values: values / n as f64,
        kind: CurvatureKind::Fisher,
    })
}

/// Empirical Fisher `1/N sum_n g_n g_n^T` over the un-averaged per-sample
/// gradients `g_n` evaluated at the training labels.
pub fn empirical_fisher(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<CurvatureMatrix> {
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    let values = match model.kind {
        ModelKind::LinearSoftmax { .. } => {
            let rows = model::per_sample_gradients(model, data, theta)?;
            sum_matrices(n, d, |i, acc| {
                let g = rows.row(i).transpose();
                acc.ger(1.0, &g, &g, 1.0);
            })
        }
        ModelKind::ScalarSine => sum_matrices(n, d, |i, acc| {
            let f = model::scalar_output(model, data, theta, i);
            let r = model::scalar_residual(model, data, f, i);
            let x = data.features()[(i, 0)];
            let g = r * x * (theta[0] * x).cos();
            acc[(0, 0)] += g * g;
        }),
        // g_n = r_n x~_n, so the outer product is r_n^2 x~ x~^T.
        _ => sum_matrices(n, d, |i, acc| {
            let f = model::scalar_output(model, data, theta, i);
            let r = model::scalar_residual(model, data, f, i);
            accumulate_weighted_outer(model, data, i, r * r, acc);
        }),
    };
    Ok(CurvatureMatrix {
        values: values / n as f64,
        kind: CurvatureKind::EmpiricalFisher,
    })
}

/// Generalized Gauss-Newton matrix under an explicit split, assembled from
/// the output Jacobians and the split's outer-function curvature.
pub fn ggn(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    split: GgnSplit,
) -> Result<CurvatureMatrix> {
    let pred = model::predict(model, data, theta)?;
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    let values = match split {
        GgnSplit::Canonical => {
            // J_n^T (d^2 a / d b^2) J_n with b = f and a = -log p(y_n | b).
            sum_matrices(n, d, |i, acc| {
                let jac = model::output_jacobian_one(model, data, theta, i);
                let f: Vec<f64> = pred.outputs.row(i).iter().cloned().collect();
                let h = model::output_hessian(model, &f);
                *acc += jac.transpose() * h * jac;
            })
        }
        GgnSplit::EfSplit => {
            // With a(b) = -log b the outer curvature is 1/b^2 while
            // D_theta b_n = -b_n g_n, so the b_n factors cancel exactly and
            // the matrix reduces to the per-sample gradient outer products.
            sum_matrices(n, d, |i, acc| {
                let residual: Vec<f64> = pred.residual_grad.row(i).iter().cloned().collect();
                let jac = model::output_jacobian_one(model, data, theta, i);
                let g = jac.transpose() * DVector::from_vec(residual);
                acc.ger(1.0, &g, &g, 1.0);
            })
        }
        GgnSplit::Trivial => {
            // b_n = theta keeps all curvature in a_n, giving the per-sample
            // loss Hessians: J^T H J plus the residual-weighted model
            // curvature.
            sum_matrices(n, d, |i, acc| {
                let jac = model::output_jacobian_one(model, data, theta, i);
                let f: Vec<f64> = pred.outputs.row(i).iter().cloned().collect();
                let h = model::output_hessian(model, &f);
                *acc += jac.transpose() * h * jac;
                for m in 0..model.output_dim() {
                    if let Some(h2) = model::output_component_hessian(model, data, theta, i, m) {
                        *acc += h2 * pred.residual_grad[(i, m)];
                    }
                }
            })
        }
    };
    Ok(CurvatureMatrix {
        values: values / n as f64,
        kind: CurvatureKind::Ggn(split),
    })
}

/// Exact analytic Hessian of the averaged loss: the Fisher term plus the
/// residual-weighted model curvature. The second term vanishes identically
/// for the linear models and is skipped for them.
pub fn hessian(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<CurvatureMatrix> {
    let base = fisher(model, data, theta)?;
    let values = match model.kind {
        ModelKind::ScalarSine => {
            let pred = model::predict(model, data, theta)?;
            let n = data.num_samples();
            let residual_term = sum_matrices(n, 1, |i, acc| {
                if let Some(h2) = model::output_component_hessian(model, data, theta, i, 0) {
                    *acc += h2 * pred.residual_grad[(i, 0)];
                }
            });
            base.values + residual_term / n as f64
        }
        _ => base.values,
    };
    Ok(CurvatureMatrix {
        values,
        kind: CurvatureKind::Hessian,
    })
}

/// Monte Carlo Fisher estimate: labels are drawn from the model's predictive
/// distribution (`samples` draws per training input) and the gradient outer
/// products are averaged over both samples and draws.
///
/// Each training input gets its own counter-mode RNG stream keyed by the
/// sample index, so the estimate is deterministic for a given seed and
/// independent of thread count.
pub fn mc_fisher(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<CurvatureMatrix> {
    if samples == 0 {
        return Err(Error::Config("mc_fisher needs at least one sample".into()));
    }
    model.check_theta(data, theta)?;
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    // One accumulator per input, computed on its own RNG stream; summed in
    // index order afterwards.
    let per_sample: Vec<DMatrix<f64>> = reduce::indexed_map(n, |i| {
        let f = model::outputs_one(model, data, theta, i);
        let mut rng = model::sample_rng(seed, i);
        let mut acc = DMatrix::zeros(d, d);
        match model.kind {
            ModelKind::LinearSoftmax { .. } => {
                for _ in 0..samples {
                    let (y_real, y_label) = model::sample_output_one(model, &f, &mut rng);
                    let residual = model::residual_grad_for(model, &f, y_real, y_label);
                    let g =
                        model::per_sample_gradient_from_residual(model, data, theta, i, &residual);
                    acc.ger(1.0, &g, &g, 1.0);
                }
            }
            // Single-output kinds: the gradient is residual * Jacobian row,
            // so accumulate the squared residuals and take one outer product.
            _ => {
                let mut weight = 0.0;
                for _ in 0..samples {
                    let (y_real, y_label) = model::sample_output_one(model, &f, &mut rng);
                    let residual = model::residual_grad_for(model, &f, y_real, y_label);
                    weight += residual[0] * residual[0];
                }
                match model.kind {
                    ModelKind::ScalarSine => {
                        let x = data.features()[(i, 0)];
                        let j = x * (theta[0] * x).cos();
                        acc[(0, 0)] = weight * j * j;
                    }
                    _ => accumulate_weighted_outer(model, data, i, weight, &mut acc),
                }
            }
        }
        acc
    });
    let mut values = DMatrix::zeros(d, d);
    for acc in per_sample {
        values += acc;
    }
    Ok(CurvatureMatrix {
        values: values / (n as f64 * samples as f64),
        kind: CurvatureKind::McFisher { seed, samples },
    })
}

/// Biased variant of [`mc_fisher`] that plugs in the most likely label
/// instead of sampling. For the Gaussian the most likely output equals the
/// prediction, so every gradient — and hence the whole matrix — is zero.
pub fn mc_fisher_argmax(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<CurvatureMatrix> {
    let pred = model::predict(model, data, theta)?;
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    let values = sum_matrices(n, d, |i, acc| {
        let f: Vec<f64> = pred.outputs.row(i).iter().cloned().collect();
        let (y_real, y_label) = model::most_likely_output(model, &f);
        let residual = model::residual_grad_for(model, &f, y_real, y_label);
        let g = model::per_sample_gradient_from_residual(model, data, theta, i, &residual);
        acc.ger(1.0, &g, &g, 1.0);
    });
    Ok(CurvatureMatrix {
        values: values / n as f64,
        kind: CurvatureKind::McFisher {
            seed: 0,
            samples: 0,
        },
    })
}

/// Result of the Gauss-Newton spectral-norm error bound check, stated in the
/// sum convention (averaged quantities are rescaled by `N` before the norms
/// are taken).
#[derive(Debug, Clone, Copy)]
pub struct GgnErrorBound {
    /// Squared spectral norm of `Hessian - GGN(canonical)`.
    pub lhs: f64,
    /// `r(theta) * beta` where `r` is the summed L1 norm of the generalized
    /// residuals.
    pub rhs: f64,
    /// Unsquared spectral norm of the gap.
    pub gap_spectral_norm: f64,
    /// `r(theta) = sum_n |d(-log p)/df at f_n|_1`.
    pub residual_l1: f64,
    /// Smoothness constant used.
    pub beta: f64,
}

/// Analytic smoothness constant for the prediction function: 0 for the
/// linear models, `max_n x_n^2` for the scalar sine model (the second
/// derivative of `sin(theta x)` is bounded by `x^2`).
pub fn default_beta(model: &ModelSpec, data: &Dataset) -> f64 {
    match model.kind {
        ModelKind::ScalarSine => (0..data.num_samples())
            .map(|i| data.features()[(i, 0)].powi(2))
            .fold(0.0, f64::max),
        _ => 0.0,
    }
}

/// Evaluate the spectral-norm bound on the Hessian/Gauss-Newton gap.
///
/// Returns `lhs = |N (Hessian - GGN)|_2^2` and `rhs = r(theta) * beta`. The
/// unsquared gap always satisfies `|N (Hessian - GGN)|_2 <= r(theta) * beta`;
/// a violation of that inequality indicates an implementation error and is
/// reported as such.
pub fn ggn_error_bound(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    beta: Option<f64>,
) -> Result<GgnErrorBound> {
    let beta = match beta {
        Some(b) => {
            if b < 0.0 {
                return Err(Error::Config("beta must be non-negative".into()));
            }
            b
        }
        None => default_beta(model, data),
    };
    let n = data.num_samples() as f64;
    let hess = hessian(model, data, theta)?;
    let g = ggn(model, data, theta, GgnSplit::Canonical)?;
    let gap = (hess.values - g.values) * n;
    let gap_norm = spectral_norm(&gap);
    let pred = model::predict(model, data, theta)?;
    let residual_l1: f64 = pred.residual_grad.iter().map(|v| v.abs()).sum();
    let rhs = residual_l1 * beta;
    if gap_norm > rhs * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Numerical(format!(
            "Gauss-Newton error bound violated: gap {gap_norm:e} > r*beta {rhs:e}"
        )));
    }
    Ok(GgnErrorBound {
        lhs: gap_norm * gap_norm,
        rhs,
        gap_spectral_norm: gap_norm,
        residual_l1,
        beta,
    })
}

/// Verdict of the split-validity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitVerdict {
    /// A point with zero residual gradient exists in the image of `b_n`.
    Valid,
    /// The residual gradient only vanishes in the closure of the image
    /// (e.g. as logits diverge); no finite witness exists.
    ValidInClosure,
    /// The residual gradient is bounded away from zero on the whole image.
    Invalid,
}

impl SplitVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            SplitVerdict::Valid => "valid",
            SplitVerdict::ValidInClosure => "valid (in closure)",
            SplitVerdict::Invalid => "invalid",
        }
    }
}

/// Report on whether a split's outer gradient can reach zero, the condition
/// under which a Gauss-Newton matrix retains its approximation guarantee.
#[derive(Debug, Clone)]
pub struct SplitValidityReport {
    pub split: GgnSplit,
    pub verdict: SplitVerdict,
    /// Whether a finite witness `b*` with zero outer gradient exists.
    pub attains_zero_gradient: bool,
    /// Witness or counter-reason.
    pub detail: String,
}

/// Check whether a split admits a point where its outer gradient vanishes.
pub fn check_split_validity(split: GgnSplit, model: &ModelSpec) -> SplitValidityReport {
    match split {
        GgnSplit::EfSplit => SplitValidityReport {
            split,
            verdict: SplitVerdict::Invalid,
            attains_zero_gradient: false,
            detail: "gradient of -log(b) is -1/b, which cannot reach zero for a probability b in (0, 1]".into(),
        },
        GgnSplit::Canonical => match model.kind {
            ModelKind::LinearGaussian | ModelKind::ScalarSine => SplitValidityReport {
                split,
                verdict: SplitVerdict::Valid,
                attains_zero_gradient: true,
                detail: "witness b* = y_n: the residual gradient b - y_n vanishes there".into(),
            },
            ModelKind::LinearLogistic | ModelKind::LinearSoftmax { .. } => SplitValidityReport {
                split,
                verdict: SplitVerdict::ValidInClosure,
                attains_zero_gradient: false,
                detail: "zero attained only in the closure of Img(b_n): the residual gradient pi - e_y vanishes only as the logits diverge".into(),
            },
        },
        GgnSplit::Trivial => match model.kind {
            ModelKind::LinearGaussian => SplitValidityReport {
                split,
                verdict: SplitVerdict::Valid,
                attains_zero_gradient: true,
                detail: "witness: any theta with x_n . theta = y_n zeroes that sample's loss gradient".into(),
            },
            ModelKind::ScalarSine => SplitValidityReport {
                split,
                verdict: SplitVerdict::Valid,
                attains_zero_gradient: true,
                detail: "witness: theta with cos(theta x_n) = 0 zeroes that sample's loss gradient".into(),
            },
            ModelKind::LinearLogistic | ModelKind::LinearSoftmax { .. } => SplitValidityReport {
                split,
                verdict: SplitVerdict::ValidInClosure,
                attains_zero_gradient: false,
                detail: "per-sample loss gradients vanish only as the logits diverge".into(),
            },
        },
    }
}

/// Variance-adaptation quantities, stated in the sum convention where the
/// stochastic gradient is `g_n = N * (per-sample gradient)` with `n` drawn
/// uniformly.
#[derive(Debug, Clone)]
pub struct VarianceAdaptation {
    /// Full variance-adaptation matrix
    /// `M = (second_moment + lambda I)^{-1} grad grad^T`.
    pub matrix: DMatrix<f64>,
    /// Per-coordinate signal-to-noise factors
    /// `d_i = grad_i^2 / (grad_i^2 + noise_cov_ii)`, each in `[0, 1]`.
    pub diagonal: DVector<f64>,
    /// Covariance of the stochastic gradient.
    pub noise_cov: DMatrix<f64>,
    /// Sum-convention loss gradient (the stochastic gradient's mean).
    pub grad: DVector<f64>,
    /// Non-central second moment of the stochastic gradient; equals
    /// `N * (sum-convention empirical Fisher)`.
    pub second_moment: DMatrix<f64>,
    /// Relative Frobenius residual of the decomposition
    /// `second_moment = noise_cov + grad grad^T`, verified internally.
    pub decomposition_residual: f64,
}

/// Compute the variance-adaptation matrix and the diagonal signal-to-noise
/// factors from full-batch per-sample gradients.
pub fn variance_adaptation(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    damping: f64,
) -> Result<VarianceAdaptation> {
    if damping < 0.0 {
        return Err(Error::Config("damping must be non-negative".into()));
    }
    let rows = model::per_sample_gradients(model, data, theta)?;
    let n = rows.nrows();
    let d = rows.ncols();
    let nf = n as f64;

    // Stochastic gradients g_n = N * row_n and their mean (the sum-convention
    // loss gradient).
    let mut grad = DVector::zeros(d);
    for i in 0..n {
        grad += rows.row(i).transpose() * nf;
    }
    grad /= nf;

    let mut second_moment = DMatrix::zeros(d, d);
    let mut noise_cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let g = rows.row(i).transpose() * nf;
        second_moment.ger(1.0 / nf, &g, &g, 1.0);
        let centered = g - &grad;
        noise_cov.ger(1.0 / nf, &centered, &centered, 1.0);
    }

    let recomposed = &noise_cov + &grad * grad.transpose();
    let denom = second_moment.norm().max(f64::MIN_POSITIVE);
    let decomposition_residual = (&second_moment - recomposed).norm() / denom;
    if decomposition_residual > 1e-8 {
        return Err(Error::Numerical(format!(
            "second-moment decomposition failed: relative residual {decomposition_residual:e}"
        )));
    }

    let diagonal = DVector::from_fn(d, |i, _| {
        let signal = grad[i] * grad[i];
        let noise = noise_cov[(i, i)];
        if signal == 0.0 {
            0.0
        } else {
            signal / (signal + noise)
        }
    });

    let matrix = if grad.iter().all(|&v| v == 0.0) {
        DMatrix::zeros(d, d)
    } else {
        // Solve (second_moment + lambda I) M = grad grad^T column by column.
        let mut damped = second_moment.clone();
        for i in 0..d {
            damped[(i, i)] += damping;
        }
        let chol = damped.cholesky().ok_or(Error::Singular {
            context: "variance adaptation second moment",
            lambda: damping,
        })?;
        let outer = &grad * grad.transpose();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let col = chol.solve(&DVector::from_column_slice(outer.column(j).as_slice()));
            m.set_column(j, &col);
        }
        m
    };

    Ok(VarianceAdaptation {
        matrix,
        diagonal,
        noise_cov,
        grad,
        second_moment,
        decomposition_residual,
    })
}
