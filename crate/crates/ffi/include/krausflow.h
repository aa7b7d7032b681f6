/* Copyright 2026 Krausflow Contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the krausflow library. Generated by cbindgen; do not edit.
 */

#ifndef KRAUSFLOW_H
#define KRAUSFLOW_H



#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
typedef enum KfStatus {
  KF_STATUS_OK = 0,
  // A pointer argument was null.
  KF_STATUS_NULL_POINTER = 1,
  // An argument violated a documented precondition.
  KF_STATUS_INVALID_ARGUMENT = 2,
  // Integration, feasibility or linear-algebra failure.
  KF_STATUS_NUMERICAL_FAILURE = 3,
  // Text input could not be parsed.
  KF_STATUS_PARSE_ERROR = 4,
  // A panic was caught at the boundary (library bug; state unspecified).
  KF_STATUS_INTERNAL_PANIC = 5,
} KfStatus;

// Constraint family handle.
typedef struct KfConstraintSet KfConstraintSet;

// Stiefel point handle (stacked Kraus blocks).
typedef struct KfPoint KfPoint;

// Control problem handle (diagonal rho and Theta spectra).
typedef struct KfProblem KfProblem;

// Flow trajectory handle.
typedef struct KfTrajectory KfTrajectory;

// Integration controls; mirrors the library defaults via
// [`kf_flow_config_default`]. `target_value` and `stop_grad_norm` use NaN
// for "unset".
typedef struct KfFlowConfig {
  double stop_eps;
  double target_value;
  double rel_tol;
  double abs_tol;
  double drift_repair_threshold;
  double drift_hard_limit;
  uint64_t max_steps;
  double max_sigma;
  double max_step_size;
  double stop_grad_norm;
} KfFlowConfig;

// One accepted integrator step as exported to C.
typedef struct KfStepRecord {
  double sigma;
  double j;
  double drift;
  double step_size;
} KfStepRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *kf_version(void);

// Builds a control problem from the diagonal spectra of rho and Theta
// (both of length `n`).
//
// # Safety
// `rho` and `theta` must point to `n` readable doubles; `out` must be a
// valid location to store the handle.
enum KfStatus kf_problem_new(size_t n,
                             const double *rho,
                             const double *theta,
                             struct KfProblem **out);

// # Safety
// `p` must be a handle from this library, not yet freed, or null.
void kf_problem_free(struct KfProblem *p);

// # Safety
// `p` must be a live problem handle; `out` a writable double.
enum KfStatus kf_problem_theta_max(const struct KfProblem *p, double *out);

// # Safety
// `p` must be a live problem handle; `out` a writable double.
enum KfStatus kf_problem_rho_max(const struct KfProblem *p, double *out);

// Draws a uniformly distributed Stiefel point from the seeded stream
// `(seed, stream_id)`.
//
// # Safety
// `out` must be a valid location to store the handle.
enum KfStatus kf_point_random(size_t n, uint64_t seed, uint64_t stream_id, struct KfPoint **out);

// Builds a point from a row-major interleaved complex buffer of the flat
// N^3 x N matrix (length `2 * n^4` doubles). The orthonormality constraint
// is validated.
//
// # Safety
// `data` must point to `2 * n^4` readable doubles; `out` must be writable.
enum KfStatus kf_point_from_data(size_t n, const double *data, struct KfPoint **out);

// # Safety
// `p` must be a handle from this library, not yet freed, or null.
void kf_point_free(struct KfPoint *p);

// Copies the flat matrix out as row-major interleaved doubles.
// `len` must be exactly `2 * n^4`.
//
// # Safety
// `buf` must point to `len` writable doubles; `p` must be live.
enum KfStatus kf_point_data(const struct KfPoint *p, double *buf, size_t len);

// # Safety
// `p` must be live; `out` writable.
enum KfStatus kf_point_dimension(const struct KfPoint *p, size_t *out);

// `||S^dag S - I||_F` of the point.
//
// # Safety
// `p` must be live; `out` writable.
enum KfStatus kf_point_drift(const struct KfPoint *p, double *out);

// Distance of the point from the unitary submanifold.
//
// # Safety
// `p` must be live; `out` writable.
enum KfStatus kf_point_unitary_distance(const struct KfPoint *p, double *out);

// Objective value J(S).
//
// # Safety
// Handles must be live; `out` writable.
enum KfStatus kf_objective(const struct KfPoint *point,
                           const struct KfProblem *problem,
                           double *out);

// Norm of the Riemannian gradient at the point.
//
// # Safety
// Handles must be live; `out` writable.
enum KfStatus kf_gradient_norm(const struct KfPoint *point,
                               const struct KfProblem *problem,
                               double *out);

// Default integration controls.
//
// # Safety
// `out` must be a writable config struct.
enum KfStatus kf_flow_config_default(struct KfFlowConfig *out);

// Gradient-ascent flow from `point`.
//
// # Safety
// Handles must be live; `cfg` readable; `out` writable.
enum KfStatus kf_flow_ascent(const struct KfPoint *point,
                             const struct KfProblem *problem,
                             const struct KfFlowConfig *cfg,
                             struct KfTrajectory **out);

// Coherent-control flow from a Haar-random unitary start drawn from
// `(seed, stream_id)`; targets rho_max unless the config overrides it.
//
// # Safety
// Handles must be live; `cfg` readable; `out` writable.
enum KfStatus kf_flow_unitary_random(const struct KfProblem *problem,
                                     uint64_t seed,
                                     uint64_t stream_id,
                                     const struct KfFlowConfig *cfg,
                                     struct KfTrajectory **out);

// # Safety
// `t` must be a handle from this library, not yet freed, or null.
void kf_trajectory_free(struct KfTrajectory *t);

// # Safety
// `t` must be live; `tau`, `lambda`, `j_initial`, `j_final`, `converged`
// each either null (skipped) or writable.
enum KfStatus kf_trajectory_stats(const struct KfTrajectory *t,
                                  uint64_t *tau,
                                  double *lambda,
                                  double *j_initial,
                                  double *j_final,
                                  bool *converged);

// # Safety
// `t` must be live; `out` writable.
enum KfStatus kf_trajectory_len(const struct KfTrajectory *t, size_t *out);

// Step record `index` (0-based accepted steps).
//
// # Safety
// `t` must be live; `out` writable.
enum KfStatus kf_trajectory_step(const struct KfTrajectory *t,
                                 size_t index,
                                 struct KfStepRecord *out);

// Final point of the trajectory as a fresh handle.
//
// # Safety
// `t` must be live; `out` writable.
enum KfStatus kf_trajectory_final_point(const struct KfTrajectory *t, struct KfPoint **out);

// Parses the text constraint format (`n <N>` then `b ...` or `fix r c`
// lines).
//
// # Safety
// `text` must be a NUL-terminated string; `out` writable.
enum KfStatus kf_constraints_parse(const char *text, struct KfConstraintSet **out);

// Element-fixing constraint family on the product `I1 x I2` (1-based).
//
// # Safety
// `i1` and `i2` must point to `len` readable values; `out` writable.
enum KfStatus kf_constraints_element_fixing(size_t n,
                                            const size_t *i1,
                                            const size_t *i2,
                                            size_t len,
                                            struct KfConstraintSet **out);

// # Safety
// `cs` must be a handle from this library, not yet freed, or null.
void kf_constraints_free(struct KfConstraintSet *cs);

// Analytic constrained optimum for an element-fixing family against the
// projector observable.
//
// # Safety
// Pointer arguments as for [`kf_constraints_element_fixing`]; `problem`
// live; `out` writable.
enum KfStatus kf_analytic_jmax_element_fixing(const struct KfProblem *problem,
                                              const size_t *i1,
                                              const size_t *i2,
                                              size_t len,
                                              double *out);

// Runs the feasibility phase from `point` and returns a feasible point.
//
// # Safety
// Handles must be live; `cfg` readable; `out` writable.
enum KfStatus kf_feasibility_descent(const struct KfPoint *point,
                                     const struct KfConstraintSet *cs,
                                     const struct KfFlowConfig *cfg,
                                     struct KfPoint **out);

// Constrained gradient-ascent flow.
//
// # Safety
// Handles must be live; `cfg` readable; `out` writable.
enum KfStatus kf_flow_constrained(const struct KfPoint *point,
                                  const struct KfProblem *problem,
                                  const struct KfConstraintSet *cs,
                                  const struct KfFlowConfig *cfg,
                                  struct KfTrajectory **out);

// Largest |h_k(S)| over the constraint family.
//
// # Safety
// Handles must be live; `out` writable.
enum KfStatus kf_constraint_violation(const struct KfPoint *point,
                                      const struct KfConstraintSet *cs,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRAUSFLOW_H */
