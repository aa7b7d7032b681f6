// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Drives the C ABI end to end from Rust: handle lifecycle, flows,
//! constraints, and data marshalling.

use std::ffi::CString;
use std::ptr;

use krausflow_ffi::*;

fn default_config() -> KfFlowConfig {
    let mut cfg = std::mem::MaybeUninit::<KfFlowConfig>::uninit();
    unsafe {
        assert_eq!(kf_flow_config_default(cfg.as_mut_ptr()), KfStatus::Ok);
        cfg.assume_init()
    }
}

#[test]
fn full_flow_roundtrip() {
    unsafe {
        let rho = [0.6, 0.4, 0.0];
        let theta = [0.0, 0.0, 1.0];
        let mut problem: *mut KfProblem = ptr::null_mut();
        assert_eq!(
            kf_problem_new(3, rho.as_ptr(), theta.as_ptr(), &mut problem),
            KfStatus::Ok
        );
        let mut tmax = 0.0;
        assert_eq!(kf_problem_theta_max(problem, &mut tmax), KfStatus::Ok);
        assert_eq!(tmax, 1.0);
        let mut rmax = 0.0;
        assert_eq!(kf_problem_rho_max(problem, &mut rmax), KfStatus::Ok);
        assert_eq!(rmax, 0.6);

        let mut point: *mut KfPoint = ptr::null_mut();
        assert_eq!(kf_point_random(3, 99, 0, &mut point), KfStatus::Ok);
        let mut drift = 1.0;
        assert_eq!(kf_point_drift(point, &mut drift), KfStatus::Ok);
        assert!(drift < 1e-10);

        let mut j0 = 0.0;
        assert_eq!(kf_objective(point, problem, &mut j0), KfStatus::Ok);
        assert!((0.0..=1.0).contains(&j0));
        let mut gnorm = 0.0;
        assert_eq!(kf_gradient_norm(point, problem, &mut gnorm), KfStatus::Ok);
        assert!(gnorm > 0.0);

        let cfg = default_config();
        let mut traj: *mut KfTrajectory = ptr::null_mut();
        assert_eq!(kf_flow_ascent(point, problem, &cfg, &mut traj), KfStatus::Ok);
        let (mut tau, mut lambda, mut ji, mut jf, mut conv) = (0u64, 0.0, 0.0, 0.0, false);
        assert_eq!(
            kf_trajectory_stats(traj, &mut tau, &mut lambda, &mut ji, &mut jf, &mut conv),
            KfStatus::Ok
        );
        assert!(conv);
        assert!(jf > 0.99);
        assert!(lambda > 0.0);
        assert_eq!(ji, j0);

        let mut len = 0usize;
        assert_eq!(kf_trajectory_len(traj, &mut len), KfStatus::Ok);
        assert_eq!(len as u64, tau);
        let mut step = KfStepRecord {
            sigma: 0.0,
            j: 0.0,
            drift: 0.0,
            step_size: 0.0,
        };
        assert_eq!(kf_trajectory_step(traj, 0, &mut step), KfStatus::Ok);
        assert!(step.step_size > 0.0);
        assert_eq!(kf_trajectory_step(traj, len, &mut step), KfStatus::InvalidArgument);

        // Final point round-trips through the raw-data constructors.
        let mut end: *mut KfPoint = ptr::null_mut();
        assert_eq!(kf_trajectory_final_point(traj, &mut end), KfStatus::Ok);
        let mut dim = 0usize;
        assert_eq!(kf_point_dimension(end, &mut dim), KfStatus::Ok);
        assert_eq!(dim, 3);
        let len_data = 2 * 27 * 3;
        let mut buf = vec![0.0f64; len_data];
        assert_eq!(kf_point_data(end, buf.as_mut_ptr(), len_data), KfStatus::Ok);
        let mut rebuilt: *mut KfPoint = ptr::null_mut();
        assert_eq!(kf_point_from_data(3, buf.as_ptr(), &mut rebuilt), KfStatus::Ok);
        let mut j_rebuilt = 0.0;
        assert_eq!(kf_objective(rebuilt, problem, &mut j_rebuilt), KfStatus::Ok);
        assert!((j_rebuilt - jf).abs() < 1e-12);

        kf_point_free(rebuilt);
        kf_point_free(end);
        kf_trajectory_free(traj);
        kf_point_free(point);
        kf_problem_free(problem);
    }
}

#[test]
fn unitary_flow_hits_rho_max() {
    unsafe {
        let rho = [0.7, 0.3];
        let theta = [0.0, 1.0];
        let mut problem: *mut KfProblem = ptr::null_mut();
        assert_eq!(
            kf_problem_new(2, rho.as_ptr(), theta.as_ptr(), &mut problem),
            KfStatus::Ok
        );
        let cfg = default_config();
        let mut traj: *mut KfTrajectory = ptr::null_mut();
        assert_eq!(
            kf_flow_unitary_random(problem, 5, 1, &cfg, &mut traj),
            KfStatus::Ok
        );
        let (mut jf, mut conv) = (0.0, false);
        assert_eq!(
            kf_trajectory_stats(
                traj,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
                &mut jf,
                &mut conv
            ),
            KfStatus::Ok
        );
        assert!(conv);
        assert!((0.69..=0.701).contains(&jf));
        let mut end: *mut KfPoint = ptr::null_mut();
        assert_eq!(kf_trajectory_final_point(traj, &mut end), KfStatus::Ok);
        let mut dist = 1.0;
        assert_eq!(kf_point_unitary_distance(end, &mut dist), KfStatus::Ok);
        assert!(dist <= 1e-6);
        kf_point_free(end);
        kf_trajectory_free(traj);
        kf_problem_free(problem);
    }
}

#[test]
fn constrained_flow_through_the_abi() {
    unsafe {
        let rho = [0.5, 0.3, 0.2];
        let theta = [0.0, 0.0, 1.0];
        let mut problem: *mut KfProblem = ptr::null_mut();
        assert_eq!(
            kf_problem_new(3, rho.as_ptr(), theta.as_ptr(), &mut problem),
            KfStatus::Ok
        );

        let i1 = [3usize];
        let i2 = [1usize];
        let mut cs: *mut KfConstraintSet = ptr::null_mut();
        assert_eq!(
            kf_constraints_element_fixing(3, i1.as_ptr(), i2.as_ptr(), 1, &mut cs),
            KfStatus::Ok
        );
        let mut jmax = 0.0;
        assert_eq!(
            kf_analytic_jmax_element_fixing(problem, i1.as_ptr(), i2.as_ptr(), 1, &mut jmax),
            KfStatus::Ok
        );
        assert!((jmax - 0.5).abs() < 1e-12);

        let mut start: *mut KfPoint = ptr::null_mut();
        assert_eq!(kf_point_random(3, 77, 0, &mut start), KfStatus::Ok);
        let cfg = default_config();
        let mut feasible: *mut KfPoint = ptr::null_mut();
        assert_eq!(
            kf_feasibility_descent(start, cs, &cfg, &mut feasible),
            KfStatus::Ok
        );
        let mut violation = 1.0;
        assert_eq!(
            kf_constraint_violation(feasible, cs, &mut violation),
            KfStatus::Ok
        );
        assert!(violation <= 1e-9);

        let mut run_cfg = cfg;
        run_cfg.target_value = jmax;
        let mut traj: *mut KfTrajectory = ptr::null_mut();
        assert_eq!(
            kf_flow_constrained(feasible, problem, cs, &run_cfg, &mut traj),
            KfStatus::Ok
        );
        let (mut jf, mut conv) = (0.0, false);
        assert_eq!(
            kf_trajectory_stats(
                traj,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
                &mut jf,
                &mut conv
            ),
            KfStatus::Ok
        );
        assert!(conv);
        assert!((jf - jmax).abs() <= 0.01);

        kf_trajectory_free(traj);
        kf_point_free(feasible);
        kf_point_free(start);
        kf_constraints_free(cs);
        kf_problem_free(problem);
    }
}

#[test]
fn constraints_parse_from_text() {
    unsafe {
        let text = CString::new("# pin the (1,2) entries\nn 2\nfix 1 2\n").unwrap();
        let mut cs: *mut KfConstraintSet = ptr::null_mut();
        assert_eq!(kf_constraints_parse(text.as_ptr(), &mut cs), KfStatus::Ok);
        kf_constraints_free(cs);

        let bad = CString::new("nonsense\n").unwrap();
        let mut cs2: *mut KfConstraintSet = ptr::null_mut();
        assert_eq!(
            kf_constraints_parse(bad.as_ptr(), &mut cs2),
            KfStatus::ParseError
        );
    }
}

#[test]
fn invalid_data_is_reported() {
    unsafe {
        // A zero matrix is nowhere near the manifold.
        let buf = vec![0.0f64; 2 * 16];
        let mut p: *mut KfPoint = ptr::null_mut();
        assert_eq!(
            kf_point_from_data(2, buf.as_ptr(), &mut p),
            KfStatus::InvalidArgument
        );
    }
}
