//! Reference solvers: the high-accuracy deterministic composite solver
//! used as the oracle everywhere, Polyak-Ruppert averaged projected SGD,
//! and the constrained M-estimator.

use nalgebra::DVector;
use rand::Rng;

use crate::instances::{Noise, ProblemInstance};
use crate::prox::{prox, Regularizer};
use crate::{Error, Result};

const ITERATION_CAP: usize = 1_000_000;

/// Default oracle tolerance on the gradient-mapping norm: two orders
/// below the smallest statistical effects measured at desk scale.
pub const ORACLE_TOL: f64 = 1e-10;

/// Output of the deterministic solver.
#[derive(Debug, Clone)]
pub struct Solution {
    pub point: DVector<f64>,
    pub iterations: usize,
    /// Gradient-mapping norm at the output.
    pub residual: f64,
}

/// Feasible deterministic default start: `prox_R(0)`.
pub fn default_init(reg: &Regularizer, dim: usize) -> Result<DVector<f64>> {
    Ok(prox(reg, &DVector::zeros(dim), 1.0)?.point)
}

/// Proximal gradient on an exactly-known smooth gradient, iterated until
/// the gradient-mapping norm `||x - prox(x - step*g)|| / step` falls
/// below `tol`. Linear convergence under strong convexity; output lies
/// within `tol/mu` of the true minimizer.
pub fn solve_deterministic<G>(
    grad_oracle: G,
    reg: &Regularizer,
    init: &DVector<f64>,
    step: f64,
    tol: f64,
) -> Result<Solution>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    if step <= 0.0 {
        return Err(Error::NonPositiveStep(step));
    }
    let mut x = init.clone();
    let mut residual = f64::INFINITY;
    for iter in 0..ITERATION_CAP {
        let g = grad_oracle(&x);
        let next = prox(reg, &(&x - &g * step), step)?.point;
        residual = (&x - &next).norm() / step;
        x = next;
        if residual <= tol {
            return Ok(Solution {
                point: x,
                iterations: iter + 1,
                residual,
            });
        }
    }
    Err(Error::IterationCapExceeded {
        cap: ITERATION_CAP,
        residual,
    })
}

/// Step-size schedule for stochastic approximation.
#[derive(Debug, Clone, Copy)]
pub enum StepSchedule {
    Constant(f64),
    /// `alpha_k = c / k^omega`, `omega` in (0, 1).
    Polynomial { c: f64, omega: f64 },
}

impl StepSchedule {
    fn at(&self, k: usize) -> f64 {
        match self {
            Self::Constant(a) => *a,
            Self::Polynomial { c, omega } => c / (k as f64).powf(*omega),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgdPlan {
    pub n_steps: usize,
    pub schedule: StepSchedule,
    /// Iterates to discard from the average; 0 by default (averaging
    /// starts at the first iterate, exactly as the two-line scheme reads).
    pub burn_in: usize,
}

impl SgdPlan {
    pub fn new(n_steps: usize, schedule: StepSchedule) -> Self {
        Self {
            n_steps,
            schedule,
            burn_in: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgdOutput {
    pub last: DVector<f64>,
    pub averaged: DVector<f64>,
}

/// Projected stochastic gradient with Polyak-Ruppert averaging:
/// `x_{k+1} = Proj(x_k - alpha_k grad f(x_k, z_k))`, averaged over all
/// iterates. Only indicator regularizers are accepted.
pub fn run_projected_sgd_pr<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    reg: &Regularizer,
    plan: &SgdPlan,
    init: &DVector<f64>,
    rng: &mut R,
) -> Result<SgdOutput> {
    let Regularizer::Indicator(set) = reg else {
        return Err(Error::NonIndicatorRegularizer);
    };
    if plan.burn_in >= plan.n_steps + 1 {
        return Err(Error::InvalidPlan("burn_in exceeds iterate count".into()));
    }
    let mut x = set.project(init)?;
    let mut mean = DVector::zeros(instance.dim());
    let mut count = 0usize;
    let include = |k: usize, x: &DVector<f64>, mean: &mut DVector<f64>, count: &mut usize| {
        if k >= plan.burn_in {
            *count += 1;
            *mean += (x - &*mean) / *count as f64;
        }
    };
    include(0, &x, &mut mean, &mut count);
    for k in 1..=plan.n_steps {
        let z = instance.sample(rng);
        let g = instance.component_grad(&x, &z);
        x = set.project(&(&x - g * plan.schedule.at(k)))?;
        include(k, &x, &mut mean, &mut count);
    }
    Ok(SgdOutput {
        last: x,
        averaged: mean,
    })
}

/// Minimizes the empirical average loss plus `R` over the given samples,
/// via the deterministic solver on the averaged gradient.
pub fn solve_m_estimator(
    instance: &ProblemInstance,
    reg: &Regularizer,
    samples: &[Noise],
    tol: f64,
) -> Result<Solution> {
    if samples.is_empty() {
        return Err(Error::Invalid("M-estimator needs at least one sample".into()));
    }
    let n = samples.len() as f64;
    let avg_grad = |x: &DVector<f64>| {
        let mut g = DVector::zeros(instance.dim());
        for z in samples {
            g += instance.component_grad(x, z);
        }
        g / n
    };
    let init = default_init(reg, instance.dim())?;
    solve_deterministic(avg_grad, reg, &init, 1.0 / instance.smoothness(), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::make_quadratic_instance;
    use crate::prox::ConstraintSet;
    use crate::seeding::rng_from_seed;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn quadratic(theta: Vec<f64>, noise_var: f64) -> ProblemInstance {
        let d = theta.len();
        make_quadratic_instance(
            DMatrix::identity(d, d),
            DVector::from_vec(theta),
            DMatrix::identity(d, d) * noise_var,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_unconstrained_hits_theta() {
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        let inst = quadratic(vec![1.0, -2.0], 0.0);
        let sol = solve_deterministic(
            |x| inst.population_grad(x),
            &Regularizer::Zero,
            &DVector::zeros(2),
            1.0,
            1e-10,
        )
        .unwrap();
        assert!((sol.point - theta).norm() < 1e-9);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn deterministic_ball_matches_radial_closed_form() {
        let inst = quadratic(vec![3.0, 4.0], 0.0);
        let reg = Regularizer::Indicator(ConstraintSet::ball2(DVector::zeros(2), 1.0).unwrap());
        let sol = solve_deterministic(
            |x| inst.population_grad(x),
            &reg,
            &DVector::zeros(2),
            1.0,
            1e-10,
        )
        .unwrap();
        let expect = DVector::from_vec(vec![0.6, 0.8]);
        assert!((sol.point - expect).norm() < 1e-9);
    }

    #[test]
    fn deterministic_orthant_matches_grid_oracle() {
        // A = diag(1,2), theta = (-1, 1), orthant: grid brute force.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let inst =
            make_quadratic_instance(a.clone(), DVector::from_vec(vec![-1.0, 1.0]), DMatrix::zeros(2, 2))
                .unwrap();
        let reg = Regularizer::Indicator(ConstraintSet::orthant(2));
        let sol = solve_deterministic(
            |x| inst.population_grad(x),
            &reg,
            &DVector::zeros(2),
            0.5,
            1e-10,
        )
        .unwrap();
        // Brute force over [0,2]^2 at 1e-3 resolution.
        let mut best = (f64::INFINITY, DVector::zeros(2));
        let steps = 2000;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = DVector::from_vec(vec![i as f64 * 1e-3, j as f64 * 1e-3]);
                let v = inst.population_value(&x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        assert!((&sol.point - best.1).norm() < 2e-3, "{:?}", sol.point);
    }

    #[test]
    fn sgd_noiseless_fixed_point() {
        let inst = quadratic(vec![0.3, 0.4], 0.0);
        let set = ConstraintSet::ball2(DVector::zeros(2), 1.0).unwrap();
        let reg = Regularizer::Indicator(set);
        let x_star = DVector::from_vec(vec![0.3, 0.4]);
        let plan = SgdPlan::new(100, StepSchedule::Constant(1.0));
        let mut rng = rng_from_seed(11);
        let out = run_projected_sgd_pr(&inst, &reg, &plan, &x_star, &mut rng).unwrap();
        assert_relative_eq!((out.last - &x_star).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((out.averaged - &x_star).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sgd_noiseless_converges_and_average_trails() {
        let inst = quadratic(vec![0.5, -0.2], 0.0);
        let reg = Regularizer::Indicator(ConstraintSet::ball2(DVector::zeros(2), 2.0).unwrap());
        let plan = SgdPlan::new(200, StepSchedule::Constant(1.0));
        let mut rng = rng_from_seed(12);
        let out = run_projected_sgd_pr(&inst, &reg, &plan, &DVector::zeros(2), &mut rng).unwrap();
        let x_star = DVector::from_vec(vec![0.5, -0.2]);
        assert!((out.last - &x_star).norm() < 1e-10);
        assert!((out.averaged - &x_star).norm() < 0.1);
    }

    #[test]
    fn sgd_rejects_penalty_regularizer() {
        let inst = quadratic(vec![0.0], 0.0);
        let plan = SgdPlan::new(10, StepSchedule::Constant(0.1));
        let mut rng = rng_from_seed(13);
        let res = run_projected_sgd_pr(
            &inst,
            &Regularizer::l1(1.0).unwrap(),
            &plan,
            &DVector::zeros(1),
            &mut rng,
        );
        assert!(matches!(res, Err(Error::NonIndicatorRegularizer)));
    }

    #[test]
    fn pr_average_equals_stored_mean() {
        let inst = quadratic(vec![0.5, -0.2], 0.04);
        let set = ConstraintSet::ball2(DVector::zeros(2), 2.0).unwrap();
        let reg = Regularizer::Indicator(set.clone());
        let plan = SgdPlan::new(50, StepSchedule::Polynomial { c: 0.5, omega: 0.6 });
        let mut rng = rng_from_seed(14);
        let out = run_projected_sgd_pr(&inst, &reg, &plan, &DVector::zeros(2), &mut rng).unwrap();

        // Recompute with an explicit iterate list on the same stream.
        let mut rng = rng_from_seed(14);
        let mut x = set.project(&DVector::zeros(2)).unwrap();
        let mut iterates = vec![x.clone()];
        for k in 1..=plan.n_steps {
            let z = inst.sample(&mut rng);
            let g = inst.component_grad(&x, &z);
            let alpha = 0.5 / (k as f64).powf(0.6);
            x = set.project(&(&x - g * alpha)).unwrap();
            iterates.push(x.clone());
        }
        let mut mean = DVector::zeros(2);
        for it in &iterates {
            mean += it;
        }
        mean /= iterates.len() as f64;
        assert_relative_eq!((out.averaged - mean).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn m_estimator_unconstrained_normal_equations() {
        let inst = quadratic(vec![1.0, 2.0], 1.0);
        let mut rng = rng_from_seed(15);
        let samples: Vec<_> = (0..50).map(|_| inst.sample(&mut rng)).collect();
        let mut zbar = DVector::zeros(2);
        for z in &samples {
            zbar += z;
        }
        zbar /= samples.len() as f64;
        let sol = solve_m_estimator(&inst, &Regularizer::Zero, &samples, 1e-10).unwrap();
        // A = I: solution is exactly the sample mean.
        assert!((sol.point - zbar).norm() < 1e-9);
    }

    #[test]
    fn m_estimator_isotropic_ball_is_projection_of_mean() {
        let inst = quadratic(vec![2.0, 0.0], 0.25);
        let set = ConstraintSet::ball2(DVector::zeros(2), 1.0).unwrap();
        let reg = Regularizer::Indicator(set.clone());
        let mut rng = rng_from_seed(16);
        let samples: Vec<_> = (0..100).map(|_| inst.sample(&mut rng)).collect();
        let mut zbar = DVector::zeros(2);
        for z in &samples {
            zbar += z;
        }
        zbar /= samples.len() as f64;
        let sol = solve_m_estimator(&inst, &reg, &samples, 1e-10).unwrap();
        let expect = set.project(&zbar).unwrap();
        assert!((sol.point - expect).norm() < 1e-8);
    }

    #[test]
    fn m_estimator_consistency_rate() {
        // Error roughly quarters (in mean square) when N quadruples.
        let inst = quadratic(vec![0.5, -0.5], 0.25);
        let reg = Regularizer::Indicator(ConstraintSet::orthant(2));
        let x_star = DVector::from_vec(vec![0.5, 0.0]);
        let mse = |n: usize, seed_base: u64| -> f64 {
            let reps = 60;
            let mut total = 0.0;
            for r in 0..reps {
                let mut rng = rng_from_seed(seed_base + r);
                let samples: Vec<_> = (0..n).map(|_| inst.sample(&mut rng)).collect();
                let sol = solve_m_estimator(&inst, &reg, &samples, 1e-10).unwrap();
                total += (sol.point - &x_star).norm_squared();
            }
            total / reps as f64
        };
        let e1 = mse(200, 100);
        let e4 = mse(800, 200);
        let ratio = e1 / e4;
        assert!(ratio > 2.0 && ratio < 8.0, "ratio {ratio}");
    }
}
