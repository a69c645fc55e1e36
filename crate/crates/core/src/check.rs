//! Finite-difference utilities.
//!
//! These are independent numerical routes used by the test suites to verify
//! the analytic gradients, Jacobians, and Hessians. They only evaluate the
//! supplied closure and never call the analytic code paths they are used to
//! check.

use nalgebra::{DMatrix, DVector};

/// Central-difference gradient of a scalar function.
///
/// ```
/// use curvlab::check::fd_gradient;
/// use nalgebra::DVector;
///
/// // f(x, y) = x^2 + 3xy has gradient (2x + 3y, 3x).
/// let f = |v: &DVector<f64>| v[0] * v[0] + 3.0 * v[0] * v[1];
/// let g = fd_gradient(f, &DVector::from_vec(vec![1.0, 2.0]), 1e-6);
/// assert!((g[0] - 8.0).abs() < 1e-6);
/// assert!((g[1] - 3.0).abs() < 1e-6);
/// ```
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = x.len();
    let mut grad = DVector::zeros(d);
    let mut p = x.clone();
    for i in 0..d {
        p[i] = x[i] + h;
        let fp = f(&p);
        p[i] = x[i] - h;
        let fm = f(&p);
        p[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central-difference Jacobian of a vector-valued function.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, d);
    let mut p = x.clone();
    for j in 0..d {
        p[j] = x[j] + h;
        let fp = f(&p);
        p[j] = x[j] - h;
        let fm = f(&p);
        p[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference Hessian of a scalar function.
///
/// Uses the four-point stencil
/// `(f(x+h_i+h_j) - f(x+h_i-h_j) - f(x-h_i+h_j) + f(x-h_i-h_j)) / (4 h^2)`.
pub fn fd_hessian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = x.len();
    let mut hess = DMatrix::zeros(d, d);
    let mut p = x.clone();
    for i in 0..d {
        for j in 0..=i {
            p[i] += h;
            p[j] += h;
            let fpp = f(&p);
            p[j] -= 2.0 * h;
            let fpm = f(&p);
            p[i] -= 2.0 * h;
            let fmm = f(&p);
            p[j] += 2.0 * h;
            let fmp = f(&p);
            p[i] = x[i];
            p[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Largest absolute entry difference between two matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

/// Relative Frobenius distance `|a - b|_F / |b|_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        (a - b).norm()
    } else {
        (a - b).norm() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_quadratic() {
        let f = |v: &DVector<f64>| v[0] * v[0] + 3.0 * v[0] * v[1];
        let g = fd_gradient(f, &DVector::from_vec(vec![1.0, 2.0]), 1e-6);
        assert!((g[0] - 8.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |v: &DVector<f64>| v[0] * v[0] + 3.0 * v[0] * v[1];
        let h = fd_hessian(f, &DVector::from_vec(vec![0.3, -0.7]), 1e-4);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-5);
        assert!((h[(1, 1)] - 0.0).abs() < 1e-5);
    }
}
