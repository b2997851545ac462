//! The variance-reduced proximal gradient algorithm: epochs of a
//! recentered stochastic proximal-gradient inner loop, with the constant
//! tuning rule and a doubling-epoch variant.

use nalgebra::DVector;
use rand::Rng;

use crate::instances::{Noise, ProblemInstance};
use crate::linalg::{mean_and_std_err, KahanVecSum};
use crate::prox::{prox, Regularizer};
use crate::{Error, Result};

/// Hard cap on the inner-loop length; K scales as (L/mu)^2 and extreme
/// condition numbers would otherwise produce impractical plans.
const K_CAP: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Same recentering size every epoch, from the tuning rule.
    Constant,
    /// Recentering size doubles each epoch starting from `t0`; K and the
    /// step size are unchanged.
    Doubling { t0: usize },
}

/// Resolved tuning parameters for one run.
#[derive(Debug, Clone)]
pub struct VrpgPlan {
    pub n_total: usize,
    /// Number of epochs M.
    pub epochs: usize,
    /// Recentering sample size per epoch (constant schedule repeats one
    /// value; doubling doubles it).
    pub recenter_sizes: Vec<usize>,
    /// Inner steps per epoch K.
    pub epoch_steps: usize,
    /// Step size lambda.
    pub step: f64,
    pub schedule: Schedule,
    pub mu: f64,
    pub smoothness: f64,
    /// Whether `N / log N >= 60 * 32 * L^2 / mu^2` holds. Infeasible
    /// plans are constructible (for exploration) but flagged.
    pub feasible: bool,
    /// Base of the logarithm used in the tuning formulas (e by default;
    /// exposed for sensitivity runs).
    pub log_base: f64,
}

impl VrpgPlan {
    /// Total samples a run will consume.
    pub fn total_samples(&self) -> usize {
        self.recenter_sizes
            .iter()
            .map(|t| t + self.epoch_steps)
            .sum()
    }
}

fn tuning_core(n_total: usize, mu: f64, smoothness: f64) -> Result<(f64, usize)> {
    if !(0.0 < mu && mu <= smoothness) {
        return Err(Error::InvalidPlan(format!(
            "need 0 < mu <= L, got mu = {mu}, L = {smoothness}"
        )));
    }
    if n_total < 3 {
        return Err(Error::InvalidPlan(format!(
            "need N >= 3 so that log N > 1, got {n_total}"
        )));
    }
    let lambda = mu / (6.0 * 64.0 * smoothness * smoothness);
    let rho = 1.0 - mu * mu / (6.0 * 64.0 * smoothness * smoothness);
    // K is stated as a real; it counts steps, so take the ceiling.
    let k_real = (120.0_f64).ln() / (1.0 / rho).ln();
    if k_real > K_CAP {
        return Err(Error::EpochStepsTooLarge(k_real));
    }
    Ok((lambda, k_real.ceil() as usize))
}

fn precondition_holds(n_total: usize, mu: f64, smoothness: f64, log_n: f64) -> bool {
    n_total as f64 / log_n >= 60.0 * 32.0 * smoothness * smoothness / (mu * mu)
}

/// Derives the constant-schedule plan: `M = ceil(log N)`,
/// `T = ceil(N / log N)`, `lambda = mu / (6 * 8^2 * L^2)` and
/// `K = ceil(log 120 / log(1 / (1 - mu^2 / (6 * 8^2 * L^2))))`.
/// Logarithms are natural; see [`derive_plan_with_log_base`].
pub fn derive_plan(n_total: usize, mu: f64, smoothness: f64) -> Result<VrpgPlan> {
    derive_plan_with_log_base(n_total, mu, smoothness, std::f64::consts::E)
}

/// Same as [`derive_plan`] with an explicit log base for the `log N`
/// occurrences (sensitivity runs only; K always uses the exact ratio).
pub fn derive_plan_with_log_base(
    n_total: usize,
    mu: f64,
    smoothness: f64,
    log_base: f64,
) -> Result<VrpgPlan> {
    if log_base <= 1.0 {
        return Err(Error::InvalidPlan(format!("log base must exceed 1, got {log_base}")));
    }
    let (lambda, k) = tuning_core(n_total, mu, smoothness)?;
    let log_n = (n_total as f64).ln() / log_base.ln();
    let epochs = log_n.ceil() as usize;
    let recenter = (n_total as f64 / log_n).ceil() as usize;
    Ok(VrpgPlan {
        n_total,
        epochs,
        recenter_sizes: vec![recenter; epochs],
        epoch_steps: k,
        step: lambda,
        schedule: Schedule::Constant,
        mu,
        smoothness,
        feasible: precondition_holds(n_total, mu, smoothness, log_n),
        log_base,
    })
}

/// Doubling-epoch variant: `T_m = t0 * 2^(m-1)`, as many epochs as the
/// sample budget `n_total` affords (each epoch also spends K inner
/// samples). K and lambda follow the constant rule.
pub fn derive_plan_doubling(
    n_total: usize,
    mu: f64,
    smoothness: f64,
    t0: usize,
) -> Result<VrpgPlan> {
    if t0 == 0 {
        return Err(Error::InvalidPlan("doubling needs t0 >= 1".into()));
    }
    let (lambda, k) = tuning_core(n_total, mu, smoothness)?;
    let mut sizes = Vec::new();
    let mut budget = n_total;
    let mut t = t0;
    while budget >= t + k {
        sizes.push(t);
        budget -= t + k;
        t = t.saturating_mul(2);
    }
    if sizes.is_empty() {
        return Err(Error::InvalidPlan(format!(
            "budget {n_total} cannot afford one epoch of t0 + K = {}",
            t0 + k
        )));
    }
    let log_n = (n_total as f64).ln();
    Ok(VrpgPlan {
        n_total,
        epochs: sizes.len(),
        recenter_sizes: sizes,
        epoch_steps: k,
        step: lambda,
        schedule: Schedule::Doubling { t0 },
        mu,
        smoothness,
        feasible: precondition_holds(n_total, mu, smoothness, log_n),
        log_base: std::f64::consts::E,
    })
}

/// Trace of one run.
#[derive(Debug, Clone)]
pub struct VrpgTrace {
    /// Anchors `x_bar_1 .. x_bar_{M+1}`; the last one is the output.
    pub epoch_anchors: Vec<DVector<f64>>,
    pub samples_drawn: usize,
    pub final_point: DVector<f64>,
    /// `||x_bar_m - ground_truth||` per anchor, when supplied.
    pub per_epoch_anchor_error: Option<Vec<f64>>,
    /// Whether the supplied init had to be projected into the domain.
    pub init_projected: bool,
}

/// The modified gradient estimate
/// `grad f(x, z) + (anchor_mean_grad - grad f(anchor, z))`.
pub fn recentered_gradient(
    instance: &ProblemInstance,
    anchor: &DVector<f64>,
    anchor_mean_grad: &DVector<f64>,
    x: &DVector<f64>,
    z: &Noise,
) -> Result<DVector<f64>> {
    let d = instance.dim();
    if x.len() != d || anchor.len() != d || anchor_mean_grad.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(instance.component_grad(x, z) + anchor_mean_grad - instance.component_grad(anchor, z))
}

/// Runs the algorithm: per epoch, T fresh samples build the anchor mean
/// gradient, then K inner proximal steps each consume one fresh sample.
/// All samples come from a single stream in epoch order, so the anchor
/// mean and the inner steps of an epoch never share a draw.
pub fn run_vrpg<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    reg: &Regularizer,
    plan: &VrpgPlan,
    init: &DVector<f64>,
    rng: &mut R,
    ground_truth: Option<&DVector<f64>>,
) -> Result<VrpgTrace> {
    let d = instance.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.len(),
        });
    }
    let (mut anchor, init_projected) = if reg.in_domain(init) {
        (init.clone(), false)
    } else {
        (prox(reg, init, 1.0)?.point, true)
    };

    let mut anchors = Vec::with_capacity(plan.epochs + 1);
    anchors.push(anchor.clone());
    let mut samples_drawn = 0usize;

    for &t_m in &plan.recenter_sizes {
        // Anchor mean gradient, compensated: T can be ~1e5 and the
        // recentering term must not drift.
        let mut acc = KahanVecSum::new(d);
        for _ in 0..t_m {
            let z = instance.sample(rng);
            acc.add(&instance.component_grad(&anchor, &z));
        }
        samples_drawn += t_m;
        let anchor_mean = acc.mean();

        let mut x = anchor.clone();
        for _ in 0..plan.epoch_steps {
            let z = instance.sample(rng);
            let g = instance.component_grad(&x, &z) + &anchor_mean
                - instance.component_grad(&anchor, &z);
            x = prox(reg, &(&x - g * plan.step), plan.step)?.point;
        }
        samples_drawn += plan.epoch_steps;
        anchor = x;
        anchors.push(anchor.clone());
    }

    let per_epoch_anchor_error =
        ground_truth.map(|gt| anchors.iter().map(|a| (a - gt).norm()).collect());
    Ok(VrpgTrace {
        final_point: anchors.last().expect("at least the init anchor").clone(),
        epoch_anchors: anchors,
        samples_drawn,
        per_epoch_anchor_error,
        init_projected,
    })
}

/// Monte Carlo check of the recentered-gradient variance bound
/// `E||~grad f(x,z) - grad f(x)||^2
///  <= 3 E||grad f(anchor,z) - grad f(anchor)||^2 / T + 6 L^2 ||x - anchor||^2`,
/// with explicit 3-sigma slack for the sampling error on both sides.
#[derive(Debug, Clone)]
pub struct VarianceReductionCheck {
    pub observed: f64,
    pub observed_std_err: f64,
    pub bound: f64,
    pub bound_std_err: f64,
    pub holds: bool,
}

pub fn check_variance_reduction<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    x: &DVector<f64>,
    anchor: &DVector<f64>,
    recenter_size: usize,
    draws: usize,
    rng: &mut R,
) -> Result<VarianceReductionCheck> {
    let pop_x = instance.population_grad(x);
    let pop_anchor = instance.population_grad(anchor);
    let mut observed_vals = Vec::with_capacity(draws);
    let mut anchor_vals = Vec::with_capacity(draws);
    for _ in 0..draws {
        // Fresh recentering set per draw; the expectation is over both.
        let mut acc = KahanVecSum::new(instance.dim());
        for _ in 0..recenter_size {
            let z = instance.sample(rng);
            acc.add(&instance.component_grad(anchor, &z));
        }
        let mean = acc.mean();
        let z = instance.sample(rng);
        let est = recentered_gradient(instance, anchor, &mean, x, &z)?;
        observed_vals.push((est - &pop_x).norm_squared());
        let za = instance.sample(rng);
        anchor_vals.push((instance.component_grad(anchor, &za) - &pop_anchor).norm_squared());
    }
    let (observed, observed_se) = mean_and_std_err(&observed_vals);
    let (anchor_second_moment, anchor_se) = mean_and_std_err(&anchor_vals);
    let l = instance.smoothness();
    let bound = 3.0 * anchor_second_moment / recenter_size as f64
        + 6.0 * l * l * (x - anchor).norm_squared();
    let bound_se = 3.0 * anchor_se / recenter_size as f64;
    let holds = observed <= bound + 3.0 * (observed_se + bound_se);
    Ok(VarianceReductionCheck {
        observed,
        observed_std_err: observed_se,
        bound,
        bound_std_err: bound_se,
        holds,
    })
}
