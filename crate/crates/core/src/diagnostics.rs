//! Diagnostics that quantify discrepancies between curvature matrices:
//! preconditioned-direction comparisons, quadratic-model fits around a
//! minimizer, a reference minimizer with a gradient-norm certificate, and
//! the Fisher vs. empirical-Fisher misspecification gap.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::curvature::{self, solve_damped, CurvatureKind, CurvatureMatrix};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelKind, ModelSpec};

/// Comparison of the empirical-Fisher and Fisher preconditioned directions
/// at a point.
#[derive(Debug, Clone)]
pub struct DirectionComparison {
    /// Cosine between `(EF + lambda I)^{-1} grad` and `(F + lambda I)^{-1} grad`.
    pub cosine: f64,
    pub ef_step_norm: f64,
    pub ngd_step_norm: f64,
    /// Damping used for the comparison (recorded because callers may fall
    /// back to a tiny nonzero value when the undamped solve is singular).
    pub damping: f64,
    pub at_theta: DVector<f64>,
}

/// Compare the two preconditioned directions at `theta` with damping
/// `lambda`. Errors on a zero gradient and on singular preconditioners: pass
/// a positive `lambda` or handle the error.
pub fn direction_comparison(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    lambda: f64,
) -> Result<DirectionComparison> {
    let grad = model::gradient(model, data, theta)?;
    if grad.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroGradient(
            "direction comparison needs a nonzero gradient",
        ));
    }
    let f = curvature::fisher(model, data, theta)?;
    let ef = curvature::empirical_fisher(model, data, theta)?;
    let ngd = solve_damped(&f.values, lambda, &grad, "fisher preconditioner")?;
    let efd = solve_damped(&ef.values, lambda, &grad, "empirical-fisher preconditioner")?;
    let nn = ngd.norm();
    let ne = efd.norm();
    if nn == 0.0 || ne == 0.0 {
        return Err(Error::ZeroGradient(
            "preconditioned direction is exactly zero",
        ));
    }
    let cosine = (efd.dot(&ngd) / (ne * nn)).clamp(-1.0, 1.0);
    Ok(DirectionComparison {
        cosine,
        ef_step_norm: ne,
        ngd_step_norm: nn,
        damping: lambda,
        at_theta: theta.clone(),
    })
}

/// [`direction_comparison`] with the undamped preconditioners, falling back
/// to `lambda = 1e-10` when a solve is singular; the fallback is visible in
/// the returned `damping` field.
pub fn direction_comparison_undamped(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<DirectionComparison> {
    match direction_comparison(model, data, theta, 0.0) {
        Err(Error::Singular { .. }) => direction_comparison(model, data, theta, 1e-10),
        other => other,
    }
}

/// Quadratic-model fit of the loss around a certified minimizer: compares
/// the true loss change `L(theta* + d) - L(theta*)` against the model value
/// `1/2 d^T M d` over unit directions `d` sampled uniformly on the sphere.
#[derive(Debug, Clone)]
pub struct QuadraticFitReport {
    pub directions: Vec<DVector<f64>>,
    pub true_delta: Vec<f64>,
    /// Model deltas per supplied matrix, keyed by kind.
    pub model_delta: Vec<(CurvatureKind, Vec<f64>)>,
    /// Largest `|model - true|` over directions and matrices.
    pub max_abs_error: f64,
    /// Largest `|model - true| / |true|` over directions and matrices.
    pub max_ratio_error: f64,
}

/// Sample `count` unit vectors uniformly on the sphere via normalized
/// Gaussian draws.
pub fn unit_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let norm = v.norm();
            if norm > 1e-12 {
                return v / norm;
            }
        })
        .collect()
}

/// Evaluate the quadratic fit for each matrix in `matrices` on a shared set
/// of sphere directions. `theta_star` must satisfy the gradient certificate
/// `|grad|_inf <= cert_tol`.
pub fn quadratic_fit(
    model: &ModelSpec,
    data: &Dataset,
    theta_star: &DVector<f64>,
    matrices: &[&CurvatureMatrix],
    num_directions: usize,
    seed: u64,
    cert_tol: f64,
) -> Result<QuadraticFitReport> {
    certify_minimizer(model, data, theta_star, cert_tol)?;
    let base_loss = model::loss(model, data, theta_star)?;
    let directions = unit_directions(theta_star.len(), num_directions, seed);
    let mut true_delta = Vec::with_capacity(num_directions);
    for d in &directions {
        let l = model::loss(model, data, &(theta_star + d))?;
        true_delta.push(l - base_loss);
    }
    let mut model_delta = Vec::with_capacity(matrices.len());
    let mut max_abs_error: f64 = 0.0;
    let mut max_ratio_error: f64 = 0.0;
    for m in matrices {
        let vals: Vec<f64> = directions
            .iter()
            .map(|d| 0.5 * (&m.values * d).dot(d))
            .collect();
        for (mv, tv) in vals.iter().zip(&true_delta) {
            let abs = (mv - tv).abs();
            max_abs_error = max_abs_error.max(abs);
            if tv.abs() > 0.0 {
                max_ratio_error = max_ratio_error.max(abs / tv.abs());
            }
        }
        model_delta.push((m.kind, vals));
    }
    Ok(QuadraticFitReport {
        directions,
        true_delta,
        model_delta,
        max_abs_error,
        max_ratio_error,
    })
}

fn certify_minimizer(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    cert_tol: f64,
) -> Result<()> {
    let grad = model::gradient(model, data, theta)?;
    let norm = grad.amax();
    if norm > cert_tol {
        return Err(Error::NoConvergence(format!(
            "point is not a certified minimizer: |grad|_inf = {norm:e} > {cert_tol:e}"
        )));
    }
    Ok(())
}

/// Certificate threshold used by [`minimize_reference`].
pub const MINIMIZER_CERT_TOL: f64 = 1e-8;

/// Reference minimizer for the convex GLM objectives.
///
/// Linear-Gaussian models are solved in closed form through the normal
/// equations; the other models run damped Newton iterations with
/// backtracking until the gradient certificate `|grad|_inf <= 1e-8` holds
/// and the step has stabilized. Problems without a finite minimizer (for
/// example separable logistic data, whose parameters diverge) are reported
/// as non-convergent.
pub fn minimize_reference(
    model: &ModelSpec,
    data: &Dataset,
    theta0: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_compat(data)?;
    if model.kind == ModelKind::LinearGaussian {
        return normal_equations(model, data);
    }

    let mut theta = theta0.clone();
    let mut last_step = f64::INFINITY;
    for _ in 0..100 {
        let grad = model::gradient(model, data, &theta)?;
        if grad.amax() <= MINIMIZER_CERT_TOL && last_step <= 1e-5 {
            return Ok(theta);
        }
        let hess = curvature::hessian(model, data, &theta)?;
        let dir = newton_direction(&hess.values, &grad)?;

        // Backtracking on the loss.
        let base = model::loss(model, data, &theta)?;
        let g_dot_d = grad.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta - &dir * alpha;
            if let Ok(l) = model::loss(model, data, &cand) {
                if l <= base - 1e-4 * alpha * g_dot_d {
                    last_step = (alpha * dir.norm()).max(f64::MIN_POSITIVE);
                    theta = cand;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence("line search failed".into()));
        }
        if theta.amax() > 1e6 {
            return Err(Error::NoConvergence(
                "parameters diverge; the objective has no finite minimizer".into(),
            ));
        }
    }
    Err(Error::NoConvergence(format!(
        "no certified minimizer within the iteration cap (last step {last_step:e})"
    )))
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    for lambda in [0.0, 1e-10, 1e-6, 1e-2] {
        if let Ok(dir) = solve_damped(hess, lambda, grad, "newton step") {
            return Ok(dir);
        }
    }
    Err(Error::Singular {
        context: "newton step",
        lambda: 1e-2,
    })
}

fn normal_equations(model: &ModelSpec, data: &Dataset) -> Result<DVector<f64>> {
    let n = data.num_samples();
    let d = model.param_dim(data.input_dim());
    let y = data.real_targets().expect("regression targets");
    let mut gram = DMatrix::zeros(d, d);
    let mut moment = DVector::zeros(d);
    for i in 0..n {
        let x = model::augmented_row(model, data, i);
        gram.ger(1.0 / n as f64, &x, &x, 1.0);
        moment += x * (y[i] / n as f64);
    }
    let theta = solve_damped(&gram, 0.0, &moment, "normal equations")?;
    certify_minimizer(model, data, &theta, MINIMIZER_CERT_TOL)?;
    Ok(theta)
}

/// Relative Fisher vs. empirical-Fisher gap at a certified minimizer:
/// `|F - EF|_F / |F|_F`.
pub fn misspecification_gap(
    model: &ModelSpec,
    data: &Dataset,
    theta_star: &DVector<f64>,
    cert_tol: f64,
) -> Result<f64> {
    certify_minimizer(model, data, theta_star, cert_tol)?;
    let f = curvature::fisher(model, data, theta_star)?;
    let ef = curvature::empirical_fisher(model, data, theta_star)?;
    let denom = f.values.norm();
    if denom == 0.0 {
        return Err(Error::Numerical("Fisher is zero at the minimizer".into()));
    }
    Ok((&f.values - &ef.values).norm() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Targets, Task};
    use nalgebra::DMatrix;

    fn line_data() -> Dataset {
        // Noisy but well-conditioned line, 30 points.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..30).map(|_| rng.random::<f64>() * 3.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 2.0 * x - 1.0 + rng.random::<f64>() - 0.5)
            .collect();
        Dataset::new(
            DMatrix::from_column_slice(30, 1, &xs),
            Targets::Real(DVector::from_vec(ys)),
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn normal_equations_certify() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = line_data();
        let theta = minimize_reference(&model, &data, &DVector::zeros(2)).unwrap();
        let g = model::gradient(&model, &data, &theta).unwrap();
        assert!(g.amax() <= 1e-8);
    }

    #[test]
    fn separable_logistic_is_flagged() {
        let model = ModelSpec::new(ModelKind::LinearLogistic, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            Targets::Labels(vec![0, 1]),
            Task::Binary,
        )
        .unwrap();
        let err = minimize_reference(&model, &data, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::NoConvergence(_)));
    }

    #[test]
    fn scalar_cosine_is_one() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            Targets::Real(DVector::from_vec(vec![3.0, 1.0])),
            Task::Regression,
        )
        .unwrap();
        let cmp =
            direction_comparison(&model, &data, &DVector::from_vec(vec![5.0]), 1e-10).unwrap();
        assert!((cmp.cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_preconditioners_give_cosine_one() {
        // Logistic at theta = 0: EF and Fisher coincide.
        let model = ModelSpec::new(ModelKind::LinearLogistic, true).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(4, 1, &[1.0, -0.5, 2.0, 0.7]),
            Targets::Labels(vec![1, 0, 1, 0]),
            Task::Binary,
        )
        .unwrap();
        let cmp = direction_comparison(&model, &data, &DVector::zeros(2), 1e-12).unwrap();
        assert!((cmp.cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_an_error_not_nan() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, false).unwrap();
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            Targets::Real(DVector::from_vec(vec![2.0])),
            Task::Regression,
        )
        .unwrap();
        // theta = 2 fits the single sample exactly: gradient is zero.
        let err =
            direction_comparison(&model, &data, &DVector::from_vec(vec![2.0]), 1e-8).unwrap_err();
        assert!(matches!(err, Error::ZeroGradient(_)));
    }

    #[test]
    fn quadratic_fit_is_exact_on_quadratics() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = line_data();
        let theta = minimize_reference(&model, &data, &DVector::zeros(2)).unwrap();
        let hess = curvature::hessian(&model, &data, &theta).unwrap();
        let report =
            quadratic_fit(&model, &data, &theta, &[&hess], 32, 5, MINIMIZER_CERT_TOL).unwrap();
        assert!(
            report.max_abs_error < 1e-9,
            "error {}",
            report.max_abs_error
        );
    }

    #[test]
    fn quadratic_fit_rejects_uncertified_points() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = line_data();
        let hess = curvature::hessian(&model, &data, &DVector::zeros(2)).unwrap();
        let err = quadratic_fit(
            &model,
            &data,
            &DVector::from_vec(vec![10.0, 10.0]),
            &[&hess],
            4,
            0,
            MINIMIZER_CERT_TOL,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoConvergence(_)));
    }

    #[test]
    fn interpolating_fit_has_unit_gap() {
        // Perfectly fittable data: EF vanishes at the minimizer, so the gap
        // is exactly |F|/|F| = 1.
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let features = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_iterator(5, (0..5).map(|i| 3.0 - 0.5 * i as f64));
        let data = Dataset::new(features, Targets::Real(y), Task::Regression).unwrap();
        let theta = minimize_reference(&model, &data, &DVector::zeros(2)).unwrap();
        let gap = misspecification_gap(&model, &data, &theta, MINIMIZER_CERT_TOL).unwrap();
        assert!((gap - 1.0).abs() < 1e-9);
    }
}
