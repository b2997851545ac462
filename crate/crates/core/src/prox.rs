//! Proximal operators and Euclidean projections for the supported
//! regularizers, with closed-form or finitely-terminating algorithms:
//! box = clip, ball = radial scaling, simplex = sort-and-threshold,
//! orthant = clamp, l1 = soft threshold, halfspace intersections =
//! Dykstra iterations to a 1e-12 fixed-point residual.

use nalgebra::DVector;

use crate::{Error, Result};

/// Membership tolerance when evaluating an indicator at a point.
const FEAS_TOL: f64 = 1e-9;
/// Activity tolerance in normal-cone computations.
const ACTIVE_TOL: f64 = 1e-9;
/// Dykstra stopping threshold on successive-iterate movement.
const DYKSTRA_TOL: f64 = 1e-12;
/// Dykstra sweep cap; non-convergence is an error, never silent.
const DYKSTRA_MAX_SWEEPS: usize = 100_000;

/// A nonempty closed convex constraint set with an exact projection.
#[derive(Debug, Clone)]
pub enum ConstraintSet {
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    Ball2 {
        center: DVector<f64>,
        radius: f64,
    },
    /// `{ x >= 0, sum(x) = scale }`.
    Simplex { dim: usize, scale: f64 },
    /// Nonnegative orthant.
    Orthant { dim: usize },
    /// Intersection of `a_i^T x <= b_i`.
    Halfspaces {
        normals: Vec<DVector<f64>>,
        offsets: Vec<f64>,
    },
}

impl ConstraintSet {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidConstraint(
                "box requires lower <= upper componentwise".into(),
            ));
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn ball2(center: DVector<f64>, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::InvalidConstraint(format!(
                "ball2.radius must be > 0, got {radius}"
            )));
        }
        Ok(Self::Ball2 { center, radius })
    }

    pub fn simplex(dim: usize, scale: f64) -> Result<Self> {
        if scale <= 0.0 {
            return Err(Error::InvalidConstraint(format!(
                "simplex.scale must be > 0, got {scale}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidConstraint("simplex needs dim >= 1".into()));
        }
        Ok(Self::Simplex { dim, scale })
    }

    pub fn orthant(dim: usize) -> Self {
        Self::Orthant { dim }
    }

    /// Builds a halfspace intersection, rejecting infeasible systems.
    /// Feasibility is checked by running the projection iteration from the
    /// origin and testing the limit point.
    pub fn halfspaces(normals: Vec<DVector<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() {
            return Err(Error::InvalidConstraint("empty halfspace list".into()));
        }
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        let dim = normals[0].len();
        if normals.iter().any(|a| a.len() != dim || a.norm() == 0.0) {
            return Err(Error::InvalidConstraint(
                "halfspace normals must be nonzero and of equal dimension".into(),
            ));
        }
        let set = Self::Halfspaces { normals, offsets };
        let origin = DVector::zeros(dim);
        match set.project(&origin) {
            Ok(p) => {
                let viol = set.max_violation(&p);
                if viol > 1e-6 {
                    return Err(Error::InfeasibleHalfspaces { residual: viol });
                }
            }
            Err(Error::DykstraNonConvergence { residual, .. }) => {
                return Err(Error::InfeasibleHalfspaces { residual });
            }
            Err(e) => return Err(e),
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Ball2 { center, .. } => center.len(),
            Self::Simplex { dim, .. } | Self::Orthant { dim } => *dim,
            Self::Halfspaces { normals, .. } => normals[0].len(),
        }
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Box { lower, upper } => {
                let mut v: f64 = 0.0;
                for i in 0..x.len() {
                    v = v.max(lower[i] - x[i]).max(x[i] - upper[i]);
                }
                v
            }
            Self::Ball2 { center, radius } => ((x - center).norm() - radius).max(0.0),
            Self::Simplex { scale, .. } => {
                let mut v = (x.sum() - scale).abs();
                for &xi in x.iter() {
                    v = v.max(-xi);
                }
                v
            }
            Self::Orthant { .. } => x.iter().fold(0.0_f64, |a, &xi| a.max(-xi)),
            Self::Halfspaces { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .fold(0.0_f64, |a, (n, b)| a.max(n.dot(x) - b)),
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.max_violation(x) <= FEAS_TOL
    }

    /// Exact Euclidean projection onto the set.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            Self::Box { lower, upper } => Ok(DVector::from_fn(x.len(), |i, _| {
                x[i].max(lower[i]).min(upper[i])
            })),
            Self::Ball2 { center, radius } => {
                let d = x - center;
                let n = d.norm();
                if n <= *radius {
                    Ok(x.clone())
                } else {
                    Ok(center + d * (*radius / n))
                }
            }
            Self::Simplex { scale, .. } => Ok(project_simplex(x, *scale)),
            Self::Orthant { .. } => Ok(x.map(|v| v.max(0.0))),
            Self::Halfspaces { normals, offsets } => {
                if normals.len() == 1 {
                    Ok(project_halfspace(x, &normals[0], offsets[0]))
                } else {
                    dykstra(x, normals, offsets)
                }
            }
        }
    }
}

/// Sort-and-threshold projection onto `{ y >= 0, sum(y) = scale }`,
/// exact up to floating point in O(d log d). Ties in the threshold are
/// resolved by the cumulative-sum rule.
fn project_simplex(x: &DVector<f64>, scale: f64) -> DVector<f64> {
    let mut u: Vec<f64> = x.iter().cloned().collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - scale) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    x.map(|v| (v - tau).max(0.0))
}

fn project_halfspace(x: &DVector<f64>, a: &DVector<f64>, b: f64) -> DVector<f64> {
    let slack = a.dot(x) - b;
    if slack <= 0.0 {
        x.clone()
    } else {
        x - a * (slack / a.norm_squared())
    }
}

/// Dykstra's alternating projection onto an intersection of halfspaces.
/// Stops when one full sweep moves the iterate less than `DYKSTRA_TOL`.
fn dykstra(x: &DVector<f64>, normals: &[DVector<f64>], offsets: &[f64]) -> Result<DVector<f64>> {
    let k = normals.len();
    let mut y = x.clone();
    let mut corrections = vec![DVector::zeros(x.len()); k];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let sweep_start = y.clone();
        for i in 0..k {
            let shifted = &y + &corrections[i];
            let projected = project_halfspace(&shifted, &normals[i], offsets[i]);
            corrections[i] = shifted - &projected;
            y = projected;
        }
        if (&y - sweep_start).norm() < DYKSTRA_TOL {
            return Ok(y);
        }
    }
    Err(Error::DykstraNonConvergence {
        sweeps: DYKSTRA_MAX_SWEEPS,
        residual: (&y - x).norm(),
    })
}

/// Value of a regularizer at a point. Infeasible indicator points get a
/// distinguished marker rather than a large float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegValue {
    Finite(f64),
    Infinite,
}

impl RegValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinite => None,
        }
    }
}

/// The penalty term `R`: an indicator of a constraint set, a weighted
/// l1 norm, or zero.
#[derive(Debug, Clone)]
pub enum Regularizer {
    Indicator(ConstraintSet),
    L1 { weight: f64 },
    Zero,
}

/// Output of a proximal step.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub point: DVector<f64>,
    /// `R` evaluated at the output (0 for indicators).
    pub objective_shift: f64,
}

impl Regularizer {
    pub fn l1(weight: f64) -> Result<Self> {
        if weight < 0.0 {
            return Err(Error::InvalidConstraint(format!(
                "l1.weight must be >= 0, got {weight}"
            )));
        }
        Ok(Self::L1 { weight })
    }

    /// Intrinsic dimension, fixed only for indicators.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Indicator(set) => Some(set.dim()),
            _ => None,
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self, Self::Indicator(_))
    }

    pub fn eval(&self, x: &DVector<f64>) -> RegValue {
        match self {
            Self::Indicator(set) => {
                if set.contains(x) {
                    RegValue::Finite(0.0)
                } else {
                    RegValue::Infinite
                }
            }
            Self::L1 { weight } => RegValue::Finite(weight * x.iter().map(|v| v.abs()).sum::<f64>()),
            Self::Zero => RegValue::Finite(0.0),
        }
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        self.eval(x) != RegValue::Infinite
    }
}

/// `argmin_y { 1/2 ||y - input||^2 + step * R(y) }`.
///
/// For indicators this is the projection (step irrelevant); for l1 a
/// componentwise soft threshold at level `step * weight`.
pub fn prox(reg: &Regularizer, input: &DVector<f64>, step: f64) -> Result<ProxResult> {
    if step <= 0.0 {
        return Err(Error::NonPositiveStep(step));
    }
    if let Some(d) = reg.dim() {
        if input.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: input.len(),
            });
        }
    }
    let point = match reg {
        Regularizer::Indicator(set) => set.project(input)?,
        Regularizer::L1 { weight } => {
            let level = step * weight;
            input.map(|v| {
                if v > level {
                    v - level
                } else if v < -level {
                    v + level
                } else {
                    0.0
                }
            })
        }
        Regularizer::Zero => input.clone(),
    };
    let objective_shift = match reg {
        // Feasible by construction for projections.
        Regularizer::Indicator(_) => 0.0,
        _ => reg.eval(&point).finite().expect("finite penalty"),
    };
    Ok(ProxResult {
        point,
        objective_shift,
    })
}

/// Euclidean distance from `-g` to the subdifferential of `R` at `x`.
/// Zero (to tolerance) certifies that `-g` is a valid subgradient.
pub fn subdifferential_residual(reg: &Regularizer, x: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
    if x.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: g.len(),
        });
    }
    let v = -g;
    match reg {
        Regularizer::Zero => Ok(v.norm()),
        Regularizer::L1 { weight } => {
            let w = *weight;
            let mut sq = 0.0;
            for i in 0..x.len() {
                let d = if x[i] > ACTIVE_TOL {
                    v[i] - w
                } else if x[i] < -ACTIVE_TOL {
                    v[i] + w
                } else if v[i] > w {
                    v[i] - w
                } else if v[i] < -w {
                    v[i] + w
                } else {
                    0.0
                };
                sq += d * d;
            }
            Ok(sq.sqrt())
        }
        Regularizer::Indicator(set) => normal_cone_distance(set, x, &v),
    }
}

/// Distance from `v` to the normal cone of `set` at the feasible point `x`.
fn normal_cone_distance(set: &ConstraintSet, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    match set {
        ConstraintSet::Box { lower, upper } => {
            let mut sq = 0.0;
            for i in 0..x.len() {
                let at_lower = (x[i] - lower[i]).abs() <= ACTIVE_TOL;
                let at_upper = (upper[i] - x[i]).abs() <= ACTIVE_TOL;
                let d = match (at_lower, at_upper) {
                    (true, true) => 0.0,               // pinned coordinate, cone is all of R
                    (true, false) => v[i].max(0.0),    // cone (-inf, 0]
                    (false, true) => (-v[i]).max(0.0), // cone [0, inf)
                    (false, false) => v[i],
                };
                sq += d * d;
            }
            Ok(sq.sqrt())
        }
        ConstraintSet::Orthant { .. } => {
            let mut sq = 0.0;
            for i in 0..x.len() {
                let d = if x[i] <= ACTIVE_TOL {
                    v[i].max(0.0)
                } else {
                    v[i]
                };
                sq += d * d;
            }
            Ok(sq.sqrt())
        }
        ConstraintSet::Ball2 { center, radius } => {
            let d = x - center;
            if d.norm() < radius - ACTIVE_TOL {
                Ok(v.norm())
            } else {
                // Cone is the outward ray through x - center.
                let u = &d / d.norm();
                let t = v.dot(&u).max(0.0);
                Ok((v - u * t).norm())
            }
        }
        ConstraintSet::Simplex { .. } => Ok(simplex_cone_distance(x, v)),
        ConstraintSet::Halfspaces { normals, offsets } => {
            // Cone generated by the active outward normals; the distance is
            // an NNLS residual.
            let active: Vec<&DVector<f64>> = normals
                .iter()
                .zip(offsets)
                .filter(|(n, &b)| (n.dot(x) - b).abs() <= ACTIVE_TOL * n.norm().max(1.0))
                .map(|(n, _)| n)
                .collect();
            if active.is_empty() {
                return Ok(v.norm());
            }
            let dim = x.len();
            let mut a = nalgebra::DMatrix::zeros(dim, active.len());
            for (j, n) in active.iter().enumerate() {
                a.set_column(j, n);
            }
            let (_, resid) = crate::linalg::nnls(&a, v, 1e-12);
            Ok(resid)
        }
    }
}

/// Distance from `v` to `span(1) + cone{-e_i : x_i = 0}` -- the normal
/// cone of the simplex at `x`. Reduces to a one-dimensional convex
/// problem in the span(1) coefficient, solved by bisection.
fn simplex_cone_distance(x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let support: Vec<bool> = x.iter().map(|&xi| xi > ACTIVE_TOL).collect();
    let objective_sq = |alpha: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            let d = if support[i] {
                v[i] - alpha
            } else {
                (v[i] - alpha).max(0.0)
            };
            s += d * d;
        }
        s
    };
    // Derivative in alpha is nondecreasing; bisect its sign change.
    let deriv = |alpha: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            if support[i] {
                s -= v[i] - alpha;
            } else {
                s -= (v[i] - alpha).max(0.0);
            }
        }
        s
    };
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (vmin - 1.0, vmax + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    objective_sq(0.5 * (lo + hi)).sqrt()
}

/// Outcome of the one-step proximal descent inequality check.
#[derive(Debug, Clone, Copy)]
pub struct ProxDescentCheck {
    pub holds: bool,
    /// Left-hand side minus right-hand side; nonnegative when the
    /// inequality holds exactly.
    pub slack: f64,
}

/// Checks the one-step proximal descent inequality
/// `f(y) + R(y) >= f(x+) + R(x+) + g^T(y - x) + (step/2)||g||^2
///  + (mu/2)||y - x||^2 + Delta^T(x+ - y)`
/// where `x+ = prox_R(x - step * v)`, `g = (x - x+)/step`, and
/// `Delta = v - grad f(x)`. Requires `step <= 1/L`.
pub fn check_prox_descent<F>(
    f_oracle: F,
    reg: &Regularizer,
    x: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    step: f64,
    mu: f64,
    smoothness: f64,
) -> Result<ProxDescentCheck>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    if step <= 0.0 {
        return Err(Error::NonPositiveStep(step));
    }
    let limit = 1.0 / smoothness;
    if step > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { step, limit });
    }
    let x_plus = prox(reg, &(x - v * step), step)?;
    let g = (x - &x_plus.point) / step;
    let (_, grad_x) = f_oracle(x);
    let delta = v - grad_x;

    let r_y = match reg.eval(y) {
        RegValue::Finite(val) => val,
        // Infinite left-hand side: the inequality is vacuously true.
        RegValue::Infinite => {
            return Ok(ProxDescentCheck {
                holds: true,
                slack: f64::INFINITY,
            })
        }
    };
    let (f_y, _) = f_oracle(y);
    let (f_xp, _) = f_oracle(&x_plus.point);
    let r_xp = x_plus.objective_shift;

    let lhs = f_y + r_y;
    let rhs = f_xp
        + r_xp
        + g.dot(&(y - x))
        + 0.5 * step * g.norm_squared()
        + 0.5 * mu * (y - x).norm_squared()
        + delta.dot(&(&x_plus.point - y));
    let slack = lhs - rhs;
    Ok(ProxDescentCheck {
        holds: slack >= -1e-10,
        slack,
    })
}
