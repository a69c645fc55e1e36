//! Damped preconditioned gradient descent.
//!
//! One update is `theta <- theta - gamma * B^{-1} grad` where `B` is the
//! identity (GD), the damped Fisher (NGD), the damped empirical Fisher
//! (EFGD), a damped Monte Carlo Fisher estimate (MC-NGD), or where the
//! update direction is the variance-adaptation matrix applied to the
//! gradient. A single run is strictly sequential; independent runs are
//! embarrassingly parallel and the grid search executes them concurrently.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::curvature::{self, solve_damped};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, ModelSpec};

/// Update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain gradient descent; ignores damping.
    Gd,
    /// Natural gradient descent: damped exact Fisher.
    Ngd,
    /// Empirical-Fisher preconditioned descent.
    Efgd,
    /// Monte Carlo Fisher preconditioned descent.
    McNgd { samples: usize },
    /// Exploratory variance-adaptation update (not part of the reproduced
    /// experiments).
    VarAdapted,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Ngd => "ngd",
            Method::Efgd => "efgd",
            Method::McNgd { .. } => "mc_ngd",
            Method::VarAdapted => "var_adapted",
        }
    }

    /// GD has no preconditioner, so damping does not affect it.
    pub fn uses_damping(&self) -> bool {
        !matches!(self, Method::Gd)
    }
}

/// Settings for one optimization run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub step_size: f64,
    pub damping: f64,
    pub iterations: usize,
    /// Base seed for stochastic preconditioners; per-step seeds are derived
    /// from it deterministically.
    #[serde(default)]
    pub seed: u64,
    /// Record the cosine between each step's direction and the undamped
    /// natural-gradient direction (costs one extra solve per step).
    #[serde(default)]
    pub record_cosine: bool,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.damping < 0.0 {
            return Err(Error::Config("damping must be non-negative".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics recorded along a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub update_norm: f64,
    pub gradient_norm: f64,
    pub cosine_to_ngd: Option<f64>,
}

/// A recorded optimization path: `iterations + 1` parameter vectors and
/// losses (fewer if the run was aborted as diverged).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub thetas: Vec<DVector<f64>>,
    pub losses: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_theta(&self) -> &DVector<f64> {
        self.thetas
            .last()
            .expect("trajectory holds the start point")
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trajectory holds the start loss")
    }
}

/// SplitMix64 mixing step, used to derive per-iteration seeds for stochastic
/// preconditioners.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stochastic preconditioner at iteration `t`.
pub fn step_seed(base_seed: u64, iteration: usize) -> u64 {
    splitmix64(base_seed ^ (iteration as u64).wrapping_add(1))
}

fn direction(
    method: Method,
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    grad: &DVector<f64>,
    damping: f64,
    seed: Option<u64>,
) -> Result<DVector<f64>> {
    match method {
        Method::Gd => Ok(grad.clone()),
        Method::Ngd => {
            let f = curvature::fisher(model, data, theta)?;
            solve_damped(&f.values, damping, grad, "fisher preconditioner")
        }
        Method::Efgd => {
            let ef = curvature::empirical_fisher(model, data, theta)?;
            solve_damped(&ef.values, damping, grad, "empirical-fisher preconditioner")
        }
        Method::McNgd { samples } => {
            let mc = curvature::mc_fisher(model, data, theta, samples, seed.unwrap_or(0))?;
            solve_damped(&mc.values, damping, grad, "mc-fisher preconditioner")
        }
        Method::VarAdapted => {
            let va = curvature::variance_adaptation(model, data, theta, damping)?;
            Ok(&va.matrix * grad)
        }
    }
}

/// One damped preconditioned update from `theta`.
pub fn step(
    method: Method,
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    step_size: f64,
    damping: f64,
    seed: Option<u64>,
) -> Result<DVector<f64>> {
    let grad = model::gradient(model, data, theta)?;
    let dir = direction(method, model, data, theta, &grad, damping, seed)?;
    let next = theta - dir * step_size;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "parameter update",
        });
    }
    Ok(next)
}

/// Run `iterations` steps from `theta0`, recording the full trajectory.
///
/// The run aborts early with `diverged = true` when the loss becomes
/// non-finite or exceeds `1e6` times the initial loss.
pub fn run(
    config: &OptimizerConfig,
    model: &ModelSpec,
    data: &Dataset,
    theta0: &DVector<f64>,
) -> Result<Trajectory> {
    config.validate()?;
    let initial_loss = model::loss(model, data, theta0)?;
    let divergence_cap = if initial_loss > 0.0 {
        1e6 * initial_loss
    } else {
        f64::INFINITY
    };

    let mut thetas = vec![theta0.clone()];
    let mut losses = vec![initial_loss];
    let mut steps = Vec::with_capacity(config.iterations);
    let mut diverged = false;

    for t in 0..config.iterations {
        let theta = thetas.last().expect("non-empty").clone();
        let grad = model::gradient(model, data, &theta)?;
        let seed = Some(step_seed(config.seed, t));
        let dir = match direction(
            config.method,
            model,
            data,
            &theta,
            &grad,
            config.damping,
            seed,
        ) {
            Ok(d) => d,
            Err(Error::NonFinite { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let update = dir * config.step_size;
        let next = &theta - &update;
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }

        let cosine = if config.record_cosine {
            ngd_cosine(model, data, &theta, &update)
        } else {
            None
        };
        steps.push(StepDiagnostics {
            update_norm: update.norm(),
            gradient_norm: grad.norm(),
            cosine_to_ngd: cosine,
        });

        let loss = match model::loss(model, data, &next) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => {
                thetas.push(next);
                losses.push(f64::INFINITY);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        thetas.push(next);
        losses.push(loss);
        if !loss.is_finite() || loss > divergence_cap {
            diverged = true;
            break;
        }
    }

    Ok(Trajectory {
        thetas,
        losses,
        steps,
        diverged,
    })
}

fn ngd_cosine(
    model: &ModelSpec,
    data: &Dataset,
    theta: &DVector<f64>,
    update: &DVector<f64>,
) -> Option<f64> {
    let grad = model::gradient(model, data, theta).ok()?;
    let f = curvature::fisher(model, data, theta).ok()?;
    let ngd = solve_damped(&f.values, 0.0, &grad, "fisher preconditioner")
        .or_else(|_| solve_damped(&f.values, 1e-10, &grad, "fisher preconditioner"))
        .ok()?;
    let nu = update.norm();
    let nn = ngd.norm();
    if nu == 0.0 || nn == 0.0 {
        return None;
    }
    Some(update.dot(&ngd) / (nu * nn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, Targets, Task};
    use nalgebra::{DMatrix, DVector};

    fn noisy_line(n: usize, seed: u64) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 1.5 - 0.5 * x + (rng.random::<f64>() - 0.5) * 0.2)
            .collect();
        Dataset::new(
            DMatrix::from_column_slice(n, 1, &xs),
            Targets::Real(DVector::from_vec(ys)),
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn ngd_solves_quadratic_in_one_step() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = noisy_line(40, 3);
        let theta0 = DVector::from_vec(vec![4.0, -3.0]);
        let next = step(Method::Ngd, &model, &data, &theta0, 1.0, 0.0, None).unwrap();
        let g = model::gradient(&model, &data, &next).unwrap();
        assert!(g.amax() < 1e-10, "gradient after Newton step: {:?}", g);
    }

    #[test]
    fn tiny_step_barely_moves() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = noisy_line(10, 4);
        let theta0 = DVector::from_vec(vec![2.0, 2.0]);
        let gamma = f64::MIN_POSITIVE;
        let next = step(Method::Gd, &model, &data, &theta0, gamma, 0.0, None).unwrap();
        let grad_norm = model::gradient(&model, &data, &theta0).unwrap().norm();
        assert!((next - theta0).norm() <= gamma * grad_norm * (1.0 + 1e-12));
    }

    #[test]
    fn single_iteration_records_two_points() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = noisy_line(10, 5);
        let cfg = OptimizerConfig {
            method: Method::Gd,
            step_size: 1e-3,
            damping: 0.0,
            iterations: 1,
            seed: 0,
            record_cosine: false,
        };
        let traj = run(&cfg, &model, &data, &DVector::zeros(2)).unwrap();
        assert_eq!(traj.thetas.len(), 2);
        assert_eq!(traj.losses.len(), 2);
        assert!(!traj.diverged);
    }

    #[test]
    fn runs_are_bit_identical_given_seed() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = noisy_line(20, 6);
        let cfg = OptimizerConfig {
            method: Method::McNgd { samples: 2 },
            step_size: 0.1,
            damping: 1e-6,
            iterations: 25,
            seed: 42,
            record_cosine: false,
        };
        let a = run(&cfg, &model, &data, &DVector::zeros(2)).unwrap();
        let b = run(&cfg, &model, &data, &DVector::zeros(2)).unwrap();
        assert_eq!(a.thetas, b.thetas);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn divergence_is_flagged() {
        let model = ModelSpec::new(ModelKind::LinearGaussian, true).unwrap();
        let data = noisy_line(10, 7);
        let cfg = OptimizerConfig {
            method: Method::Gd,
            step_size: 1e10,
            damping: 0.0,
            iterations: 50,
            seed: 0,
            record_cosine: false,
        };
        let traj = run(&cfg, &model, &data, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(traj.diverged);
        assert!(traj.thetas.len() < 51);
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = OptimizerConfig {
            method: Method::Gd,
            step_size: 0.0,
            damping: 0.0,
            iterations: 1,
            seed: 0,
            record_cosine: false,
        };
        assert!(cfg.validate().is_err());
    }
}
