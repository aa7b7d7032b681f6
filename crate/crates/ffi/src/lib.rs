// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! C ABI for the krausflow library.
//!
//! Conventions:
//! * every function returns a [`KfStatus`] code; results travel through out
//!   parameters;
//! * handles (`KfProblem`, `KfPoint`, `KfTrajectory`, `KfConstraintSet`) are
//!   opaque, created and destroyed by this library only;
//! * complex matrices cross the boundary as row-major interleaved
//!   `(re, im)` doubles;
//! * handles are not thread-safe to mutate concurrently, but distinct
//!   handles may be used from distinct threads freely.
//!
//! The C header `include/krausflow.h` is generated by cbindgen at build
//! time and committed alongside the crate.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use krausflow::constraints::{
    analytic_jmax_element_fixing, build_element_fixing, feasibility_descent, parse_constraints,
    project_to_constraints, ConstraintSet,
};
use krausflow::error::Error;
use krausflow::flow::{flow_ascent, flow_unitary, FlowConfig, Trajectory, VectorField};
use krausflow::landscape::{gradient, objective, ControlProblem};
use krausflow::matrix::CMatrix;
use krausflow::sampling::{haar_unitary, SeededStream};
use krausflow::stiefel::{distance_to_unitary_submanifold, random_stiefel, StiefelPoint};
use num_complex::Complex64;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KfStatus {
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// An argument violated a documented precondition.
    InvalidArgument = 2,
    /// Integration, feasibility or linear-algebra failure.
    NumericalFailure = 3,
    /// Text input could not be parsed.
    ParseError = 4,
    /// A panic was caught at the boundary (library bug; state unspecified).
    InternalPanic = 5,
}

fn status_of(e: &Error) -> KfStatus {
    match e {
        Error::DimensionMismatch(_) | Error::ContractViolation(_) | Error::Capability(_) => {
            KfStatus::InvalidArgument
        }
        Error::Parse(_) => KfStatus::ParseError,
        _ => KfStatus::NumericalFailure,
    }
}

/// Control problem handle (diagonal rho and Theta spectra).
pub struct KfProblem {
    inner: ControlProblem,
}

/// Stiefel point handle (stacked Kraus blocks).
pub struct KfPoint {
    inner: StiefelPoint,
}

/// Flow trajectory handle.
pub struct KfTrajectory {
    inner: Trajectory,
}

/// Constraint family handle.
pub struct KfConstraintSet {
    inner: ConstraintSet,
}

/// Integration controls; mirrors the library defaults via
/// [`kf_flow_config_default`]. `target_value` and `stop_grad_norm` use NaN
/// for "unset".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KfFlowConfig {
    pub stop_eps: f64,
    pub target_value: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub drift_repair_threshold: f64,
    pub drift_hard_limit: f64,
    pub max_steps: u64,
    pub max_sigma: f64,
    pub max_step_size: f64,
    pub stop_grad_norm: f64,
}

impl KfFlowConfig {
    fn to_config(self) -> FlowConfig {
        FlowConfig {
            stop_eps: self.stop_eps,
            target_value: if self.target_value.is_nan() {
                None
            } else {
                Some(self.target_value)
            },
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            drift_repair_threshold: self.drift_repair_threshold,
            drift_hard_limit: self.drift_hard_limit,
            max_steps: self.max_steps,
            max_sigma: self.max_sigma,
            max_step_size: self.max_step_size,
            stop_grad_norm: if self.stop_grad_norm.is_nan() {
                None
            } else {
                Some(self.stop_grad_norm)
            },
        }
    }
}

/// One accepted integrator step as exported to C.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KfStepRecord {
    pub sigma: f64,
    pub j: f64,
    pub drift: f64,
    pub step_size: f64,
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return KfStatus::NullPointer,
        }
    };
}

fn guard<F: FnOnce() -> KfStatus>(f: F) -> KfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => KfStatus::InternalPanic,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a control problem from the diagonal spectra of rho and Theta
/// (both of length `n`).
///
/// # Safety
/// `rho` and `theta` must point to `n` readable doubles; `out` must be a
/// valid location to store the handle.
#[no_mangle]
pub unsafe extern "C" fn kf_problem_new(
    n: usize,
    rho: *const f64,
    theta: *const f64,
    out: *mut *mut KfProblem,
) -> KfStatus {
    guard(|| {
        if rho.is_null() || theta.is_null() || out.is_null() {
            return KfStatus::NullPointer;
        }
        let rho = unsafe { std::slice::from_raw_parts(rho, n) }.to_vec();
        let theta = unsafe { std::slice::from_raw_parts(theta, n) }.to_vec();
        match ControlProblem::new(rho, theta) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfProblem { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `p` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn kf_problem_free(p: *mut KfProblem) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// # Safety
/// `p` must be a live problem handle; `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn kf_problem_theta_max(p: *const KfProblem, out: *mut f64) -> KfStatus {
    let p = nonnull!(p);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = p.inner.theta_max() };
    KfStatus::Ok
}

/// # Safety
/// `p` must be a live problem handle; `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn kf_problem_rho_max(p: *const KfProblem, out: *mut f64) -> KfStatus {
    let p = nonnull!(p);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = p.inner.rho_max() };
    KfStatus::Ok
}

/// Draws a uniformly distributed Stiefel point from the seeded stream
/// `(seed, stream_id)`.
///
/// # Safety
/// `out` must be a valid location to store the handle.
#[no_mangle]
pub unsafe extern "C" fn kf_point_random(
    n: usize,
    seed: u64,
    stream_id: u64,
    out: *mut *mut KfPoint,
) -> KfStatus {
    guard(|| {
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        if n < 2 {
            return KfStatus::InvalidArgument;
        }
        let mut rng = SeededStream::new(seed, stream_id).rng();
        let inner = random_stiefel(n, &mut rng);
        unsafe { *out = Box::into_raw(Box::new(KfPoint { inner })) };
        KfStatus::Ok
    })
}

/// Builds a point from a row-major interleaved complex buffer of the flat
/// N^3 x N matrix (length `2 * n^4` doubles). The orthonormality constraint
/// is validated.
///
/// # Safety
/// `data` must point to `2 * n^4` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kf_point_from_data(
    n: usize,
    data: *const f64,
    out: *mut *mut KfPoint,
) -> KfStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return KfStatus::NullPointer;
        }
        if n < 2 {
            return KfStatus::InvalidArgument;
        }
        let rows = n * n * n;
        let raw = unsafe { std::slice::from_raw_parts(data, 2 * rows * n) };
        let mat = CMatrix::from_fn(rows, n, |r, c| {
            let k = 2 * (r * n + c);
            Complex64::new(raw[k], raw[k + 1])
        });
        match StiefelPoint::from_flat(mat) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfPoint { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `p` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn kf_point_free(p: *mut KfPoint) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Copies the flat matrix out as row-major interleaved doubles.
/// `len` must be exactly `2 * n^4`.
///
/// # Safety
/// `buf` must point to `len` writable doubles; `p` must be live.
#[no_mangle]
pub unsafe extern "C" fn kf_point_data(p: *const KfPoint, buf: *mut f64, len: usize) -> KfStatus {
    let p = nonnull!(p);
    if buf.is_null() {
        return KfStatus::NullPointer;
    }
    let n = p.inner.n();
    let rows = n * n * n;
    if len != 2 * rows * n {
        return KfStatus::InvalidArgument;
    }
    let out = unsafe { std::slice::from_raw_parts_mut(buf, len) };
    let m = p.inner.as_matrix();
    for r in 0..rows {
        for c in 0..n {
            let k = 2 * (r * n + c);
            out[k] = m[(r, c)].re;
            out[k + 1] = m[(r, c)].im;
        }
    }
    KfStatus::Ok
}

/// # Safety
/// `p` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_point_dimension(p: *const KfPoint, out: *mut usize) -> KfStatus {
    let p = nonnull!(p);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = p.inner.n() };
    KfStatus::Ok
}

/// `||S^dag S - I||_F` of the point.
///
/// # Safety
/// `p` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_point_drift(p: *const KfPoint, out: *mut f64) -> KfStatus {
    let p = nonnull!(p);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = p.inner.drift() };
    KfStatus::Ok
}

/// Distance of the point from the unitary submanifold.
///
/// # Safety
/// `p` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_point_unitary_distance(p: *const KfPoint, out: *mut f64) -> KfStatus {
    let p = nonnull!(p);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = distance_to_unitary_submanifold(&p.inner) };
    KfStatus::Ok
}

/// Objective value J(S).
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_objective(
    point: *const KfPoint,
    problem: *const KfProblem,
    out: *mut f64,
) -> KfStatus {
    guard(|| {
        let s = nonnull!(point);
        let p = nonnull!(problem);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        match objective(&s.inner, &p.inner) {
            Ok(j) => {
                unsafe { *out = j };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Norm of the Riemannian gradient at the point.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_gradient_norm(
    point: *const KfPoint,
    problem: *const KfProblem,
    out: *mut f64,
) -> KfStatus {
    guard(|| {
        let s = nonnull!(point);
        let p = nonnull!(problem);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        match gradient(&s.inner, &p.inner) {
            Ok(g) => {
                unsafe { *out = g.norm() };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Default integration controls.
///
/// # Safety
/// `out` must be a writable config struct.
#[no_mangle]
pub unsafe extern "C" fn kf_flow_config_default(out: *mut KfFlowConfig) -> KfStatus {
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    let d = FlowConfig::default();
    unsafe {
        *out = KfFlowConfig {
            stop_eps: d.stop_eps,
            target_value: f64::NAN,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            drift_repair_threshold: d.drift_repair_threshold,
            drift_hard_limit: d.drift_hard_limit,
            max_steps: d.max_steps,
            max_sigma: d.max_sigma,
            max_step_size: d.max_step_size,
            stop_grad_norm: f64::NAN,
        };
    }
    KfStatus::Ok
}

fn run_flow(
    s0: &StiefelPoint,
    p: &ControlProblem,
    cfg: FlowConfig,
    cs: Option<&ConstraintSet>,
    out: *mut *mut KfTrajectory,
) -> KfStatus {
    let result = match cs {
        None => flow_ascent(s0, p, &cfg, VectorField::FullGradient),
        Some(cs) => flow_ascent(s0, p, &cfg, VectorField::Constrained(cs)),
    };
    match result {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(KfTrajectory { inner })) };
            KfStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Gradient-ascent flow from `point`.
///
/// # Safety
/// Handles must be live; `cfg` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_flow_ascent(
    point: *const KfPoint,
    problem: *const KfProblem,
    cfg: *const KfFlowConfig,
    out: *mut *mut KfTrajectory,
) -> KfStatus {
    guard(|| {
        let s = nonnull!(point);
        let p = nonnull!(problem);
        let c = nonnull!(cfg);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        run_flow(&s.inner, &p.inner, c.to_config(), None, out)
    })
}

/// Coherent-control flow from a Haar-random unitary start drawn from
/// `(seed, stream_id)`; targets rho_max unless the config overrides it.
///
/// # Safety
/// Handles must be live; `cfg` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_flow_unitary_random(
    problem: *const KfProblem,
    seed: u64,
    stream_id: u64,
    cfg: *const KfFlowConfig,
    out: *mut *mut KfTrajectory,
) -> KfStatus {
    guard(|| {
        let p = nonnull!(problem);
        let c = nonnull!(cfg);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        let mut rng = SeededStream::new(seed, stream_id).rng();
        let u0 = haar_unitary(p.inner.n(), &mut rng);
        match flow_unitary(&u0, &p.inner, &c.to_config()) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfTrajectory { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `t` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn kf_trajectory_free(t: *mut KfTrajectory) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// # Safety
/// `t` must be live; `tau`, `lambda`, `j_initial`, `j_final`, `converged`
/// each either null (skipped) or writable.
#[no_mangle]
pub unsafe extern "C" fn kf_trajectory_stats(
    t: *const KfTrajectory,
    tau: *mut u64,
    lambda: *mut f64,
    j_initial: *mut f64,
    j_final: *mut f64,
    converged: *mut bool,
) -> KfStatus {
    let t = nonnull!(t);
    unsafe {
        if !tau.is_null() {
            *tau = t.inner.tau;
        }
        if !lambda.is_null() {
            *lambda = t.inner.lambda;
        }
        if !j_initial.is_null() {
            *j_initial = t.inner.j_initial();
        }
        if !j_final.is_null() {
            *j_final = t.inner.j_final();
        }
        if !converged.is_null() {
            *converged = t.inner.converged;
        }
    }
    KfStatus::Ok
}

/// # Safety
/// `t` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_trajectory_len(t: *const KfTrajectory, out: *mut usize) -> KfStatus {
    let t = nonnull!(t);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    unsafe { *out = t.inner.steps.len() };
    KfStatus::Ok
}

/// Step record `index` (0-based accepted steps).
///
/// # Safety
/// `t` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_trajectory_step(
    t: *const KfTrajectory,
    index: usize,
    out: *mut KfStepRecord,
) -> KfStatus {
    let t = nonnull!(t);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    match t.inner.steps.get(index) {
        Some(s) => {
            unsafe {
                *out = KfStepRecord {
                    sigma: s.sigma,
                    j: s.j,
                    drift: s.drift,
                    step_size: s.step_size,
                };
            }
            KfStatus::Ok
        }
        None => KfStatus::InvalidArgument,
    }
}

/// Final point of the trajectory as a fresh handle.
///
/// # Safety
/// `t` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_trajectory_final_point(
    t: *const KfTrajectory,
    out: *mut *mut KfPoint,
) -> KfStatus {
    let t = nonnull!(t);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    let inner = t.inner.final_point.clone();
    unsafe { *out = Box::into_raw(Box::new(KfPoint { inner })) };
    KfStatus::Ok
}

/// Parses the text constraint format (`n <N>` then `b ...` or `fix r c`
/// lines).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_constraints_parse(
    text: *const c_char,
    out: *mut *mut KfConstraintSet,
) -> KfStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return KfStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(t) => t,
            Err(_) => return KfStatus::ParseError,
        };
        match parse_constraints(text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfConstraintSet { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Element-fixing constraint family on the product `I1 x I2` (1-based).
///
/// # Safety
/// `i1` and `i2` must point to `len` readable values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_constraints_element_fixing(
    n: usize,
    i1: *const usize,
    i2: *const usize,
    len: usize,
    out: *mut *mut KfConstraintSet,
) -> KfStatus {
    guard(|| {
        if i1.is_null() || i2.is_null() || out.is_null() {
            return KfStatus::NullPointer;
        }
        let i1 = unsafe { std::slice::from_raw_parts(i1, len) };
        let i2 = unsafe { std::slice::from_raw_parts(i2, len) };
        match build_element_fixing(n, i1, i2) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfConstraintSet { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `cs` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn kf_constraints_free(cs: *mut KfConstraintSet) {
    if !cs.is_null() {
        drop(unsafe { Box::from_raw(cs) });
    }
}

/// Analytic constrained optimum for an element-fixing family against the
/// projector observable.
///
/// # Safety
/// Pointer arguments as for [`kf_constraints_element_fixing`]; `problem`
/// live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_analytic_jmax_element_fixing(
    problem: *const KfProblem,
    i1: *const usize,
    i2: *const usize,
    len: usize,
    out: *mut f64,
) -> KfStatus {
    guard(|| {
        let p = nonnull!(problem);
        if i1.is_null() || i2.is_null() || out.is_null() {
            return KfStatus::NullPointer;
        }
        let i1 = unsafe { std::slice::from_raw_parts(i1, len) };
        let i2 = unsafe { std::slice::from_raw_parts(i2, len) };
        match analytic_jmax_element_fixing(&p.inner, i1, i2) {
            Ok(v) => {
                unsafe { *out = v };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Runs the feasibility phase from `point` and returns a feasible point.
///
/// # Safety
/// Handles must be live; `cfg` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_feasibility_descent(
    point: *const KfPoint,
    cs: *const KfConstraintSet,
    cfg: *const KfFlowConfig,
    out: *mut *mut KfPoint,
) -> KfStatus {
    guard(|| {
        let s = nonnull!(point);
        let c = nonnull!(cs);
        let f = nonnull!(cfg);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        let feasible = match feasibility_descent(&s.inner, &c.inner, &f.to_config()) {
            Ok(r) => r,
            Err(e) => return status_of(&e),
        };
        match project_to_constraints(&feasible.point, &c.inner) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(KfPoint { inner })) };
                KfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Constrained gradient-ascent flow.
///
/// # Safety
/// Handles must be live; `cfg` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_flow_constrained(
    point: *const KfPoint,
    problem: *const KfProblem,
    cs: *const KfConstraintSet,
    cfg: *const KfFlowConfig,
    out: *mut *mut KfTrajectory,
) -> KfStatus {
    guard(|| {
        let s = nonnull!(point);
        let p = nonnull!(problem);
        let c = nonnull!(cs);
        let f = nonnull!(cfg);
        if out.is_null() {
            return KfStatus::NullPointer;
        }
        run_flow(&s.inner, &p.inner, f.to_config(), Some(&c.inner), out)
    })
}

/// Largest |h_k(S)| over the constraint family.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kf_constraint_violation(
    point: *const KfPoint,
    cs: *const KfConstraintSet,
    out: *mut f64,
) -> KfStatus {
    let s = nonnull!(point);
    let c = nonnull!(cs);
    if out.is_null() {
        return KfStatus::NullPointer;
    }
    let h = c.inner.h_values(&s.inner);
    unsafe { *out = h.iter().fold(0.0f64, |m, v| m.max(v.abs())) };
    KfStatus::Ok
}
