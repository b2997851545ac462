//! Synthetic stochastic problem instances with analytic ground truth,
//! plus KKT analytics at the constrained optimum: multipliers, active
//! set, tangent projector, Lagrangian Hessian, gradient-noise covariance
//! and the two candidate limiting covariances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::prox::{ConstraintSet, Regularizer};
use crate::{Error, Result};

/// One noise draw. For the Gaussian family this is the vector `z`; the
/// state-scaled family appends one extra coordinate holding the random
/// curvature scale.
pub type Noise = DVector<f64>;

#[derive(Debug, Clone)]
enum InstanceKind {
    /// `f(x, z) = 1/2 x^T A x - z^T x`, `z ~ N(theta, Sigma)`.
    /// Gradient noise is state-independent.
    QuadraticGaussian,
    /// `f(x, z) = 1/2 x^T (A + s S) x - z^T x` with `s ~ U(-level, level)`
    /// independent of `z`. Gradient noise grows with `||x||`, which makes
    /// anchor-dependent tilts genuinely different.
    QuadraticStateNoise { scale_dir: DMatrix<f64>, level: f64 },
}

/// A stochastic objective satisfying the strong-convexity, smoothness and
/// per-sample Lipschitz assumptions, with analytic population quantities.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub label: String,
    kind: InstanceKind,
    a: DMatrix<f64>,
    theta: DVector<f64>,
    sigma: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
    mu: f64,
    smoothness: f64,
    /// Test hook: additive bias on the sampled `z`, zero in real use.
    sampler_bias: DVector<f64>,
}

/// Builds the quadratic-Gaussian instance `f(x,z) = 1/2 x^T A x - z^T x`.
/// `mu` and `L` are the exact extreme eigenvalues of `A`; the gradient
/// noise covariance at any point is exactly `Sigma`.
pub fn make_quadratic_instance(
    a: DMatrix<f64>,
    theta: DVector<f64>,
    sigma: DMatrix<f64>,
) -> Result<ProblemInstance> {
    let dim = theta.len();
    if a.nrows() != dim || a.ncols() != dim || sigma.nrows() != dim || sigma.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: a.nrows().max(sigma.nrows()),
        });
    }
    if (&a - a.transpose()).norm() > 1e-10 * a.norm().max(1.0) {
        return Err(Error::Invalid("A must be symmetric".into()));
    }
    let (lo, hi) = linalg::symmetric_eig_bounds(&a);
    if lo <= 1e-12 * hi {
        return Err(Error::NotPositiveDefinite { min_eig: lo });
    }
    let noise_factor = linalg::psd_factor(&sigma)?;
    Ok(ProblemInstance {
        label: "quadratic".into(),
        kind: InstanceKind::QuadraticGaussian,
        sampler_bias: DVector::zeros(dim),
        a,
        theta,
        sigma,
        noise_factor,
        mu: lo,
        smoothness: hi,
    })
}

/// Quadratic instance with state-scaled gradient noise:
/// `grad f(x, z) = (A + s S) x - z`, `s ~ U(-level, level)`.
/// `S` is symmetrized and the per-sample smoothness becomes
/// `L = lambda_max(A) + level * ||S||_2`.
pub fn make_state_noise_instance(
    a: DMatrix<f64>,
    theta: DVector<f64>,
    sigma: DMatrix<f64>,
    scale_dir: DMatrix<f64>,
    level: f64,
) -> Result<ProblemInstance> {
    let mut base = make_quadratic_instance(a, theta, sigma)?;
    if level < 0.0 {
        return Err(Error::Invalid("noise level must be >= 0".into()));
    }
    let s = (&scale_dir + scale_dir.transpose()) * 0.5;
    if s.nrows() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: s.nrows(),
        });
    }
    let (s_lo, s_hi) = linalg::symmetric_eig_bounds(&s);
    let s_norm = s_lo.abs().max(s_hi.abs());
    // Population curvature is unchanged (E s = 0), but the per-sample
    // Lipschitz constant must cover the worst curvature draw.
    base.smoothness += level * s_norm;
    base.mu = (base.mu - 0.0).min(base.mu); // population mu unchanged
    base.kind = InstanceKind::QuadraticStateNoise { scale_dir: s, level };
    base.label = "quadratic-state-noise".into();
    Ok(base)
}

impl ProblemInstance {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Smoothness constant L.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Test hook: mis-declare the constants (to exercise the assumption
    /// validator's failure paths).
    pub fn with_declared_constants(mut self, mu: f64, smoothness: f64) -> Self {
        self.mu = mu;
        self.smoothness = smoothness;
        self
    }

    /// Test hook: plant a sampler bias so unbiasedness checks fail.
    pub fn with_sampler_bias(mut self, bias: DVector<f64>) -> Self {
        assert_eq!(bias.len(), self.dim());
        self.sampler_bias = bias;
        self
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise {
        let d = self.dim();
        let g = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let z = &self.theta + &self.noise_factor * g + &self.sampler_bias;
        match &self.kind {
            InstanceKind::QuadraticGaussian => z,
            InstanceKind::QuadraticStateNoise { level, .. } => {
                let s: f64 = if *level > 0.0 {
                    rng.random_range(-level..*level)
                } else {
                    0.0
                };
                let mut out = DVector::zeros(d + 1);
                out.rows_mut(0, d).copy_from(&z);
                out[d] = s;
                out
            }
        }
    }

    pub fn component_grad(&self, x: &DVector<f64>, z: &Noise) -> DVector<f64> {
        match &self.kind {
            InstanceKind::QuadraticGaussian => &self.a * x - z,
            InstanceKind::QuadraticStateNoise { scale_dir, .. } => {
                let d = self.dim();
                let zv = z.rows(0, d);
                let s = z[d];
                &self.a * x + scale_dir * x * s - DVector::from(zv)
            }
        }
    }

    pub fn component_value(&self, x: &DVector<f64>, z: &Noise) -> f64 {
        match &self.kind {
            InstanceKind::QuadraticGaussian => 0.5 * x.dot(&(&self.a * x)) - z.dot(x),
            InstanceKind::QuadraticStateNoise { scale_dir, .. } => {
                let d = self.dim();
                let zv = DVector::from(z.rows(0, d));
                let s = z[d];
                0.5 * x.dot(&(&self.a * x)) + 0.5 * s * x.dot(&(scale_dir * x)) - zv.dot(x)
            }
        }
    }

    pub fn population_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.theta
    }

    pub fn population_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.theta.dot(x)
    }

    /// Population Hessian (constant for the quadratic families).
    pub fn hessian(&self) -> DMatrix<f64> {
        self.a.clone()
    }

    /// Analytic covariance of the per-sample gradient at `x`.
    pub fn analytic_sigma_star(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            InstanceKind::QuadraticGaussian => self.sigma.clone(),
            InstanceKind::QuadraticStateNoise { scale_dir, level } => {
                // Var(s) = level^2 / 3, s independent of z.
                let sx = scale_dir * x;
                &self.sigma + &sx * sx.transpose() * (level * level / 3.0)
            }
        }
    }
}

/// A smooth inequality constraint `g(x) <= 0` with explicit derivatives.
#[derive(Debug, Clone)]
pub enum SmoothConstraint {
    /// `a^T x - b <= 0`.
    Linear { normal: DVector<f64>, offset: f64 },
    /// `||x - c||^2 - r^2 <= 0`.
    BallSq { center: DVector<f64>, radius: f64 },
}

impl SmoothConstraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Linear { normal, offset } => normal.dot(x) - offset,
            Self::BallSq { center, radius } => (x - center).norm_squared() - radius * radius,
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Linear { normal, .. } => normal.clone(),
            Self::BallSq { center, .. } => (x - center) * 2.0,
        }
    }

    pub fn hessian(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Self::Linear { .. } => DMatrix::zeros(dim, dim),
            Self::BallSq { .. } => DMatrix::identity(dim, dim) * 2.0,
        }
    }
}

/// Encodes a constraint set as a list of smooth inequalities. The simplex
/// equality is split into two inequalities; all resulting `g_i` are twice
/// continuously differentiable.
pub fn smooth_constraints(set: &ConstraintSet) -> Vec<SmoothConstraint> {
    let d = set.dim();
    let e = |i: usize, s: f64| {
        let mut v = DVector::zeros(d);
        v[i] = s;
        v
    };
    match set {
        ConstraintSet::Box { lower, upper } => {
            let mut out = Vec::with_capacity(2 * d);
            for i in 0..d {
                out.push(SmoothConstraint::Linear {
                    normal: e(i, 1.0),
                    offset: upper[i],
                });
                out.push(SmoothConstraint::Linear {
                    normal: e(i, -1.0),
                    offset: -lower[i],
                });
            }
            out
        }
        ConstraintSet::Ball2 { center, radius } => vec![SmoothConstraint::BallSq {
            center: center.clone(),
            radius: *radius,
        }],
        ConstraintSet::Orthant { .. } => (0..d)
            .map(|i| SmoothConstraint::Linear {
                normal: e(i, -1.0),
                offset: 0.0,
            })
            .collect(),
        ConstraintSet::Simplex { scale, .. } => {
            let mut out: Vec<SmoothConstraint> = (0..d)
                .map(|i| SmoothConstraint::Linear {
                    normal: e(i, -1.0),
                    offset: 0.0,
                })
                .collect();
            out.push(SmoothConstraint::Linear {
                normal: DVector::from_element(d, 1.0),
                offset: *scale,
            });
            out.push(SmoothConstraint::Linear {
                normal: DVector::from_element(d, -1.0),
                offset: -*scale,
            });
            out
        }
        ConstraintSet::Halfspaces { normals, offsets } => normals
            .iter()
            .zip(offsets)
            .map(|(n, &b)| SmoothConstraint::Linear {
                normal: n.clone(),
                offset: b,
            })
            .collect(),
    }
}

/// Which limiting-covariance assembly a trace refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovCandidate {
    /// `P H P Sigma P H P`, the sandwich exactly as displayed.
    LiteralSandwich,
    /// `P (P H P)^+ P Sigma P (P H P)^+ P`, with the Hessian inverted on
    /// the tangent space.
    PinvSandwich,
}

/// KKT data at the constrained population optimum.
#[derive(Debug, Clone)]
pub struct KktCertificate {
    pub x_star: DVector<f64>,
    /// One multiplier per smooth constraint, zero on the inactive ones.
    pub beta_star: DVector<f64>,
    pub active_set: Vec<usize>,
    /// Orthogonal projector onto the critical tangent cone.
    pub tangent_projector: DMatrix<f64>,
    /// Lagrangian Hessian at the optimum.
    pub lagrangian_hessian: DMatrix<f64>,
    /// Gradient-noise covariance at the optimum.
    pub sigma_star: DMatrix<f64>,
    /// Both candidate limiting covariances; the benchmark module
    /// disambiguates them empirically.
    pub cov_literal: DMatrix<f64>,
    pub cov_pinv: DMatrix<f64>,
    pub trace_literal: f64,
    pub trace_pinv: f64,
}

impl KktCertificate {
    pub fn cov(&self, which: CovCandidate) -> &DMatrix<f64> {
        match which {
            CovCandidate::LiteralSandwich => &self.cov_literal,
            CovCandidate::PinvSandwich => &self.cov_pinv,
        }
    }

    pub fn trace(&self, which: CovCandidate) -> f64 {
        match which {
            CovCandidate::LiteralSandwich => self.trace_literal,
            CovCandidate::PinvSandwich => self.trace_pinv,
        }
    }
}

/// Default activity tolerance: three orders above the 1e-10 solver
/// tolerance, so numerically-zero constraint values are cleanly separated
/// from near-active ones.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-7;

const RANK_TOL: f64 = 1e-10;
const STATIONARITY_TOL: f64 = 1e-6;
const NNLS_RESIDUAL_TOL: f64 = 1e-6;

/// Recovers the KKT certificate at `x_star` for an indicator constraint.
///
/// Multipliers come from nonnegative least squares on the stationarity
/// equation restricted to the active constraints; a residual above 1e-6
/// is reported as degeneracy, never guessed away.
pub fn compute_kkt(
    instance: &ProblemInstance,
    set: &ConstraintSet,
    x_star: &DVector<f64>,
    active_tol: f64,
) -> Result<KktCertificate> {
    let d = instance.dim();
    let grad = instance.population_grad(x_star);
    // Sanity: x_star must satisfy the projected stationarity condition.
    let step = 1.0 / instance.smoothness();
    let mapped = set.project(&(x_star - &grad * step))?;
    let gm_norm = (x_star - mapped).norm() * instance.smoothness();
    if gm_norm > STATIONARITY_TOL {
        return Err(Error::NotStationary { residual: gm_norm });
    }

    let constraints = smooth_constraints(set);
    let active_set: Vec<usize> = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.value(x_star).abs() <= active_tol)
        .map(|(i, _)| i)
        .collect();

    let mut beta_star = DVector::zeros(constraints.len());
    if !active_set.is_empty() {
        let mut g_mat = DMatrix::zeros(d, active_set.len());
        for (j, &i) in active_set.iter().enumerate() {
            g_mat.set_column(j, &constraints[i].gradient(x_star));
        }
        let (beta_active, resid) = linalg::nnls(&g_mat, &(-&grad), 1e-12);
        if resid > NNLS_RESIDUAL_TOL {
            return Err(Error::DegenerateMultipliers {
                residual: resid,
                tol: NNLS_RESIDUAL_TOL,
            });
        }
        for (j, &i) in active_set.iter().enumerate() {
            beta_star[i] = beta_active[j];
        }
    } else if grad.norm() > STATIONARITY_TOL {
        return Err(Error::NotStationary {
            residual: grad.norm(),
        });
    }

    let mut hessian = instance.hessian();
    for &i in &active_set {
        if beta_star[i] != 0.0 {
            hessian += constraints[i].hessian(d) * beta_star[i];
        }
    }

    let mut rows = DMatrix::zeros(active_set.len(), d);
    for (j, &i) in active_set.iter().enumerate() {
        rows.set_row(j, &constraints[i].gradient(x_star).transpose());
    }
    let p = linalg::nullspace_projector(&rows, d, RANK_TOL);

    let sigma_star = instance.analytic_sigma_star(x_star);
    let php = &p * &hessian * &p;
    let ps = &p * &sigma_star * &p;
    let cov_literal = &php * &ps * &php;
    let php_pinv = linalg::symmetric_pinv(&php, RANK_TOL);
    let proj_pinv = &p * &php_pinv * &p;
    let cov_pinv = &proj_pinv * &ps * &proj_pinv;

    Ok(KktCertificate {
        x_star: x_star.clone(),
        beta_star,
        active_set,
        tangent_projector: p,
        lagrangian_hessian: hessian,
        sigma_star,
        trace_literal: cov_literal.trace(),
        trace_pinv: cov_pinv.trace(),
        cov_literal,
        cov_pinv,
    })
}

/// Solves the population composite problem by deterministic proximal
/// gradient with step `1/L`, to gradient-mapping tolerance `tol`.
pub fn solve_population(
    instance: &ProblemInstance,
    reg: &Regularizer,
    tol: f64,
) -> Result<DVector<f64>> {
    let sol = crate::baselines::solve_deterministic(
        |x| instance.population_grad(x),
        reg,
        &crate::baselines::default_init(reg, instance.dim())?,
        1.0 / instance.smoothness(),
        tol,
    )?;
    Ok(sol.point)
}

/// Empirical covariance of the per-sample gradient at `x_star` over
/// `samples` fresh draws.
pub fn estimate_sigma_star<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    x_star: &DVector<f64>,
    samples: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    assert!(samples >= 2, "need at least two samples");
    let grads: Vec<DVector<f64>> = (0..samples)
        .map(|_| {
            let z = instance.sample(rng);
            instance.component_grad(x_star, &z)
        })
        .collect();
    linalg::sample_covariance(&grads)
}

/// Result of one randomized assumption check.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    pub pass: bool,
    /// Worst slack observed (negative = violation for the two-sided
    /// curvature checks; for unbiasedness, margin below the 3-sigma bound).
    pub worst_slack: f64,
}

/// Randomized validation report for the structural assumptions.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// `mu ||x-y||^2 <= (grad f(x) - grad f(y))^T (x-y) <= L ||x-y||^2`.
    pub curvature: AssumptionCheck,
    /// Per-sample gradient is L-Lipschitz.
    pub per_sample_lipschitz: AssumptionCheck,
    /// `E_z grad f(x, z) = grad f(x)` at 3-sigma.
    pub unbiasedness: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.curvature.pass && self.per_sample_lipschitz.pass && self.unbiasedness.pass
    }
}

pub fn validate_assumptions<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    trials: usize,
    rng: &mut R,
) -> AssumptionReport {
    let d = instance.dim();
    let mu = instance.mu();
    let l = instance.smoothness();
    let tol = 1e-9;

    let rand_point = |rng: &mut R| -> DVector<f64> {
        DVector::from_fn(d, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            2.0 * g
        })
    };

    let mut curvature_worst = f64::INFINITY;
    let mut curvature_pass = true;
    for _ in 0..trials {
        let x = rand_point(rng);
        let y = rand_point(rng);
        let dsq = (&x - &y).norm_squared();
        if dsq == 0.0 {
            continue;
        }
        let inner = (instance.population_grad(&x) - instance.population_grad(&y)).dot(&(&x - &y));
        let lower_slack = inner - mu * dsq;
        let upper_slack = l * dsq - inner;
        let slack = lower_slack.min(upper_slack);
        curvature_worst = curvature_worst.min(slack);
        if slack < -tol * dsq.max(1.0) {
            curvature_pass = false;
        }
    }

    let mut lipschitz_worst = f64::INFINITY;
    let mut lipschitz_pass = true;
    for _ in 0..trials {
        let x = rand_point(rng);
        let y = rand_point(rng);
        let z = instance.sample(rng);
        let lhs = (instance.component_grad(&x, &z) - instance.component_grad(&y, &z)).norm();
        let rhs = l * (&x - &y).norm();
        let slack = rhs - lhs;
        lipschitz_worst = lipschitz_worst.min(slack);
        if slack < -tol * rhs.max(1.0) {
            lipschitz_pass = false;
        }
    }

    // Mean test at a fixed random point with a 3-sigma margin.
    let x = rand_point(rng);
    let grads: Vec<DVector<f64>> = (0..trials.max(2))
        .map(|_| {
            let z = instance.sample(rng);
            instance.component_grad(&x, &z)
        })
        .collect();
    let mut mean = DVector::zeros(d);
    for g in &grads {
        mean += g;
    }
    mean /= grads.len() as f64;
    let cov = linalg::sample_covariance(&grads);
    let bound = 3.0 * (cov.trace() / grads.len() as f64).sqrt();
    let err = (mean - instance.population_grad(&x)).norm();
    let unbiased_slack = bound - err;

    AssumptionReport {
        curvature: AssumptionCheck {
            pass: curvature_pass,
            worst_slack: curvature_worst,
        },
        per_sample_lipschitz: AssumptionCheck {
            pass: lipschitz_pass,
            worst_slack: lipschitz_worst,
        },
        unbiasedness: AssumptionCheck {
            pass: unbiased_slack >= 0.0,
            worst_slack: unbiased_slack,
        },
    }
}
