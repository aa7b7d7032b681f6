// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gradient-flow integration on the manifold: an embedded Dormand-Prince
//! RK5(4) pair with a mixed absolute/relative error test, drift repair by
//! polar retraction, ascent monotonicity guarding, and the tau / lambda
//! search-effort metrics.
//!
//! One trajectory is strictly sequential; independent trajectories share no
//! state and may run concurrently.

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::landscape::{gradient_flat, objective_flat, ControlProblem};
use crate::matrix::CMatrix;
use crate::stiefel::{
    distance_to_unitary_submanifold, retract, unitary_point, StiefelPoint, DRIFT_TOLERANCE,
};

/// Residual below which a feasibility descent counts as converged.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Largest single-step objective decrease tolerated on an ascent trajectory.
pub const ASCENT_SLACK: f64 = 1e-8;

/// Largest single-step increase tolerated on a feasibility descent.
pub const DESCENT_SLACK: f64 = 1e-10;

/// Integration controls. Defaults follow the experiment protocol: stop once
/// the objective is within `stop_eps` of the target, keep the
/// orthonormality drift under `2e-4` with repair at `1e-5`.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Objective gap that triggers termination.
    pub stop_eps: f64,
    /// Target objective value; `None` means the top of the landscape
    /// (theta_max; rho_max is substituted by [`flow_unitary`]).
    pub target_value: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Post-step drift above this triggers a polar retraction.
    pub drift_repair_threshold: f64,
    /// Drift above this, even after retraction, aborts the run.
    pub drift_hard_limit: f64,
    pub max_steps: u64,
    pub max_sigma: f64,
    /// Absolute ceiling on the step size. The landscape curvature scale is
    /// O(1) in sigma; resolving it keeps tau meaningful as an effort metric
    /// and keeps per-step drift small.
    pub max_step_size: f64,
    /// Optional extra stopping rule on the vector-field norm; used where no
    /// target value is known (general constrained runs) and for parking
    /// exactly on a critical point.
    pub stop_grad_norm: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            stop_eps: 0.01,
            target_value: None,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            drift_repair_threshold: 1e-5,
            drift_hard_limit: DRIFT_TOLERANCE,
            max_steps: 100_000,
            max_sigma: 1e6,
            max_step_size: 0.5,
            stop_grad_norm: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_eps > 0.0) {
            return Err(Error::ContractViolation("stop_eps must be positive".into()));
        }
        if !(self.drift_repair_threshold < self.drift_hard_limit) {
            return Err(Error::ContractViolation(
                "drift_repair_threshold must lie below drift_hard_limit".into(),
            ));
        }
        if !(self.rel_tol >= 0.0 && self.abs_tol > 0.0) {
            return Err(Error::ContractViolation(
                "integrator tolerances must be positive".into(),
            ));
        }
        if !(self.max_step_size > 0.0) {
            return Err(Error::ContractViolation(
                "max_step_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One accepted integrator step, as exported by the per-step CSV record.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub sigma: f64,
    pub j: f64,
    pub drift: f64,
    pub step_size: f64,
}

/// Why the integration loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Objective passed `target - stop_eps`.
    TargetReached,
    /// Vector-field norm fell below `stop_grad_norm`.
    GradientConverged,
    /// Residual fell below the feasibility threshold.
    FeasibilityReached,
    MaxSteps,
    MaxSigma,
}

/// Ordered record of one flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Accepted sigma-steps taken by the solver.
    pub tau: u64,
    /// Accumulated path length through the ambient space, retraction and
    /// repair displacements included.
    pub lambda: f64,
    /// Monitored value at the start and after every accepted step.
    pub objective_series: Vec<f64>,
    /// Post-repair drift after every accepted step.
    pub drift_series: Vec<f64>,
    pub sigma_final: f64,
    pub converged: bool,
    pub final_point: StiefelPoint,
    pub steps: Vec<StepRecord>,
    /// Per-step path-length increments; `lambda` is their left-to-right sum.
    pub lambda_increments: Vec<f64>,
    pub stop_reason: StopReason,
    /// Attempts rejected by the local error test.
    pub rejected_error: u64,
    /// Attempts rejected by the monotonicity guard.
    pub rejected_monotone: u64,
}

impl Trajectory {
    pub fn j_initial(&self) -> f64 {
        self.objective_series[0]
    }

    pub fn j_final(&self) -> f64 {
        *self.objective_series.last().unwrap()
    }
}

/// The right-hand side driving the flow.
#[derive(Debug, Clone, Copy)]
pub enum VectorField<'a> {
    /// Plain Riemannian gradient ascent of the objective.
    FullGradient,
    /// Gradient ascent projected onto the constraint-respecting tangent
    /// subspace.
    Constrained(&'a ConstraintSet),
    /// Descent of the constraint residual `f(S) = sum_k <G_k,S>^2`
    /// (feasibility phase).
    DescentFeasibility(&'a ConstraintSet),
}

// Dormand-Prince 5(4) coefficients (the field is autonomous, so the
// stage abscissae are not needed).
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const INITIAL_STEP: f64 = 1e-3;
const STEP_SAFETY: f64 = 0.9;
const STEP_SHRINK_MIN: f64 = 0.2;
const STEP_GROW_MAX: f64 = 5.0;
const MIN_STEP: f64 = 1e-14;

#[inline]
fn axpy(acc: &mut CMatrix, coef: f64, x: &CMatrix) {
    acc.zip_apply(x, |a, b| *a += b * coef);
}

#[inline]
fn dist(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn drift_of(m: &CMatrix) -> f64 {
    let n = m.ncols();
    (m.ad_mul(m) - CMatrix::identity(n, n)).norm()
}

/// Outcome of the post-acceptance hook.
pub(crate) enum HookOutcome {
    Unchanged,
    Replaced(CMatrix),
}

pub(crate) struct DriverSettings<'a> {
    pub cfg: &'a FlowConfig,
    /// Guard direction: descent trajectories must not increase the value.
    pub descent: bool,
    /// Stop as soon as the monitored value satisfies this predicate.
    pub value_stop: Option<(f64, StopReason)>,
}

/// Adaptive embedded RK5(4) loop shared by all flow entry points.
pub(crate) fn drive(
    settings: &DriverSettings,
    n: usize,
    s0: &CMatrix,
    field: &mut dyn FnMut(&CMatrix) -> Result<CMatrix>,
    value: &mut dyn FnMut(&CMatrix) -> f64,
    post_accept: Option<&mut dyn FnMut(&CMatrix) -> Result<HookOutcome>>,
) -> Result<Trajectory> {
    let cfg = settings.cfg;
    cfg.validate()?;
    let mut post_accept = post_accept;
    let slack = if settings.descent {
        DESCENT_SLACK
    } else {
        ASCENT_SLACK
    };
    let value_hit = |v: f64| -> bool {
        match settings.value_stop {
            Some((threshold, _)) => {
                if settings.descent {
                    v < threshold
                } else {
                    v > threshold
                }
            }
            None => false,
        }
    };

    let mut y = s0.clone();
    let mut j = value(&y);
    let mut objective_series = vec![j];
    let mut drift_series = Vec::new();
    let mut steps = Vec::new();
    let mut lambda_increments = Vec::new();
    let mut tau: u64 = 0;
    let mut lambda: f64 = 0.0;
    let mut sigma: f64 = 0.0;
    let mut rejected_error: u64 = 0;
    let mut rejected_monotone: u64 = 0;

    macro_rules! finish {
        ($y:expr, $reason:expr) => {{
            let stop_reason = $reason;
            let converged = matches!(
                stop_reason,
                StopReason::TargetReached | StopReason::FeasibilityReached
            );
            return Ok(Trajectory {
                tau,
                lambda,
                objective_series,
                drift_series,
                sigma_final: sigma,
                converged,
                final_point: StiefelPoint::from_flat_unchecked(n, $y),
                steps,
                lambda_increments,
                stop_reason,
                rejected_error,
                rejected_monotone,
            });
        }};
    }

    if value_hit(j) {
        let reason = settings.value_stop.unwrap().1;
        finish!(y, reason);
    }

    let mut k1 = field(&y)?;
    if let Some(gtol) = cfg.stop_grad_norm {
        if k1.norm() <= gtol {
            finish!(y, StopReason::GradientConverged);
        }
    }

    let mut h = INITIAL_STEP.min(cfg.max_step_size);
    let max_attempts = cfg.max_steps.saturating_mul(12).saturating_add(1000);
    let mut attempts: u64 = 0;
    let mut stage = CMatrix::zeros(y.nrows(), y.ncols());

    loop {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::IntegrationFailure(format!(
                "step attempt budget exhausted after {attempts} attempts"
            )));
        }
        if h < MIN_STEP * sigma.abs().max(1.0) {
            return Err(Error::IntegrationFailure(format!(
                "step size underflow (h = {h:.3e} at sigma = {sigma:.3e})"
            )));
        }

        // Stages k2..k6 plus the FSAL stage k7 at the candidate point.
        stage.copy_from(&y);
        axpy(&mut stage, h * A2[0], &k1);
        let k2 = field(&stage)?;

        stage.copy_from(&y);
        axpy(&mut stage, h * A3[0], &k1);
        axpy(&mut stage, h * A3[1], &k2);
        let k3 = field(&stage)?;

        stage.copy_from(&y);
        axpy(&mut stage, h * A4[0], &k1);
        axpy(&mut stage, h * A4[1], &k2);
        axpy(&mut stage, h * A4[2], &k3);
        let k4 = field(&stage)?;

        stage.copy_from(&y);
        axpy(&mut stage, h * A5[0], &k1);
        axpy(&mut stage, h * A5[1], &k2);
        axpy(&mut stage, h * A5[2], &k3);
        axpy(&mut stage, h * A5[3], &k4);
        let k5 = field(&stage)?;

        stage.copy_from(&y);
        axpy(&mut stage, h * A6[0], &k1);
        axpy(&mut stage, h * A6[1], &k2);
        axpy(&mut stage, h * A6[2], &k3);
        axpy(&mut stage, h * A6[3], &k4);
        axpy(&mut stage, h * A6[4], &k5);
        let k6 = field(&stage)?;

        let mut y5 = y.clone();
        axpy(&mut y5, h * B5[0], &k1);
        axpy(&mut y5, h * B5[2], &k3);
        axpy(&mut y5, h * B5[3], &k4);
        axpy(&mut y5, h * B5[4], &k5);
        axpy(&mut y5, h * B5[5], &k6);
        let k7 = field(&y5)?;

        let mut err_m = CMatrix::zeros(y.nrows(), y.ncols());
        axpy(&mut err_m, h * ERR[0], &k1);
        axpy(&mut err_m, h * ERR[2], &k3);
        axpy(&mut err_m, h * ERR[3], &k4);
        axpy(&mut err_m, h * ERR[4], &k5);
        axpy(&mut err_m, h * ERR[5], &k6);
        axpy(&mut err_m, h * ERR[6], &k7);
        let err = err_m.norm();
        let tol = cfg.abs_tol + cfg.rel_tol * y.norm();

        if !err.is_finite() {
            rejected_error += 1;
            h *= STEP_SHRINK_MIN;
            continue;
        }
        if err > tol {
            rejected_error += 1;
            let factor = (STEP_SAFETY * (tol / err).powf(0.2)).max(STEP_SHRINK_MIN);
            h *= factor;
            continue;
        }

        // Error test passed. Retract onto the manifold before committing:
        // the monitored value is only meaningful on-manifold, and a lazier
        // repair policy would inject value kicks of order
        // drift * ||ambient gradient|| that cannot be shrunk by shortening
        // the step, deadlocking the monotonicity guard below.
        let mut y_new = y5;
        let mut lambda_inc = dist(&y_new, &y);
        let drift_pre = drift_of(&y_new);
        if !drift_pre.is_finite() {
            return Err(Error::IntegrationFailure("non-finite state".into()));
        }
        let repaired = retract(&y_new)
            .map_err(|e| Error::IntegrationFailure(format!("drift repair failed: {e}")))?
            .flatten();
        let moved = dist(&repaired, &y_new);
        lambda_inc += moved;
        // FSAL stays valid when the repair displacement is below the
        // field's own noise floor.
        let mut modified = moved > 1e-13 * y.norm().max(1.0);
        y_new = repaired;
        let mut drift_final = drift_of(&y_new);
        if drift_final > cfg.drift_hard_limit {
            return Err(Error::IntegrationFailure(format!(
                "drift {drift_final:.3e} above the hard limit even after retraction"
            )));
        }
        if let Some(hook) = post_accept.as_deref_mut() {
            match hook(&y_new)? {
                HookOutcome::Unchanged => {}
                HookOutcome::Replaced(adjusted) => {
                    lambda_inc += dist(&adjusted, &y_new);
                    y_new = adjusted;
                    modified = true;
                    drift_final = drift_of(&y_new);
                    if drift_final > cfg.drift_hard_limit {
                        return Err(Error::IntegrationFailure(format!(
                            "drift {drift_final:.3e} above the hard limit after repair hook"
                        )));
                    }
                }
            }
        }
        let j_new = value(&y_new);
        if !j_new.is_finite() {
            return Err(Error::IntegrationFailure("non-finite objective".into()));
        }
        let monotone_ok = if settings.descent {
            j_new <= j + slack
        } else {
            j_new >= j - slack
        };
        if !monotone_ok {
            // The exact flow is monotone; a step that is not gets retried
            // shorter, which also shrinks the repair displacement.
            rejected_monotone += 1;
            h *= 0.5;
            continue;
        }

        // Commit.
        sigma += h;
        tau += 1;
        lambda += lambda_inc;
        lambda_increments.push(lambda_inc);
        y = y_new;
        j = j_new;
        objective_series.push(j);
        drift_series.push(drift_final);
        steps.push(StepRecord {
            sigma,
            j,
            drift: drift_final,
            step_size: h,
        });

        if value_hit(j) {
            let reason = settings.value_stop.unwrap().1;
            finish!(y, reason);
        }

        if modified {
            k1 = field(&y)?;
        } else {
            k1 = k7;
        }
        if let Some(gtol) = cfg.stop_grad_norm {
            if k1.norm() <= gtol {
                finish!(y, StopReason::GradientConverged);
            }
        }
        if tau >= cfg.max_steps {
            finish!(y, StopReason::MaxSteps);
        }
        if sigma >= cfg.max_sigma {
            finish!(y, StopReason::MaxSigma);
        }

        let factor = if err == 0.0 {
            STEP_GROW_MAX
        } else {
            (STEP_SAFETY * (tol / err).powf(0.2)).clamp(STEP_SHRINK_MIN, STEP_GROW_MAX)
        };
        h = (h * factor).min(cfg.max_step_size);
    }
}

/// Integrates `dS/dsigma = F(S)` from `s0` until the objective clears
/// `target - stop_eps` (converged) or a budget runs out.
pub fn flow_ascent(
    s0: &StiefelPoint,
    p: &ControlProblem,
    cfg: &FlowConfig,
    field: VectorField,
) -> Result<Trajectory> {
    if s0.n() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "flow_ascent: point N = {}, problem N = {}",
            s0.n(),
            p.n()
        )));
    }
    let n = p.n();
    match field {
        VectorField::FullGradient => {
            let target = cfg.target_value.unwrap_or_else(|| p.theta_max());
            let settings = DriverSettings {
                cfg,
                descent: false,
                value_stop: Some((target - cfg.stop_eps, StopReason::TargetReached)),
            };
            drive(
                &settings,
                n,
                s0.as_matrix(),
                &mut |m| Ok(gradient_flat(m, p)),
                &mut |m| objective_flat(m, p),
                None,
            )
        }
        VectorField::Constrained(cs) => crate::constraints::constrained_ascent(s0, p, cfg, cs),
        VectorField::DescentFeasibility(cs) => {
            crate::constraints::feasibility_flow(s0, cfg, cs)
        }
    }
}

/// Coherent-control flow: starts at the unitary point of `u0`, targets the
/// unitary ceiling `rho_max`, and verifies at every accepted step that the
/// trajectory stays on the unitary submanifold (distance <= 1e-6).
pub fn flow_unitary(u0: &CMatrix, p: &ControlProblem, cfg: &FlowConfig) -> Result<Trajectory> {
    let s0 = unitary_point(u0)?;
    if s0.n() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "flow_unitary: unitary is {}x{}, problem N = {}",
            u0.nrows(),
            u0.ncols(),
            p.n()
        )));
    }
    let n = p.n();
    let target = cfg.target_value.unwrap_or_else(|| p.rho_max());
    let settings = DriverSettings {
        cfg,
        descent: false,
        value_stop: Some((target - cfg.stop_eps, StopReason::TargetReached)),
    };
    let mut check = |m: &CMatrix| -> Result<HookOutcome> {
        let d = distance_to_unitary_submanifold(&StiefelPoint::from_flat_unchecked(n, m.clone()));
        if d > 1e-6 {
            return Err(Error::InvarianceViolation(format!(
                "trajectory left the unitary submanifold (distance {d:.3e})"
            )));
        }
        Ok(HookOutcome::Unchanged)
    };
    drive(
        &settings,
        n,
        s0.as_matrix(),
        &mut |m| Ok(gradient_flat(m, p)),
        &mut |m| objective_flat(m, p),
        Some(&mut check),
    )
}
