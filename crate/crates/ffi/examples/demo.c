/* Copyright 2026 Krausflow Contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Minimal C consumer: drive one gradient flow and print its metrics.
 *
 * Build (from the workspace root, after `cargo build -p krausflow-ffi --release`):
 *   cc crates/ffi/examples/demo.c -Icrates/ffi/include \
 *      target/release/libkrausflow_ffi.a -lm -lpthread -ldl -o demo
 */
#include <stdio.h>
#include <stdint.h>
#include "krausflow.h"

int main(void) {
    printf("krausflow %s\n", kf_version());

    const double rho[5] = {1.0, 0.0, 0.0, 0.0, 0.0};
    const double theta[5] = {0.0, 0.0, 0.0, 0.0, 1.0};
    KfProblem *problem = NULL;
    if (kf_problem_new(5, rho, theta, &problem) != KF_STATUS_OK) {
        fprintf(stderr, "problem construction failed\n");
        return 1;
    }

    KfPoint *start = NULL;
    if (kf_point_random(5, 2026, 0, &start) != KF_STATUS_OK) {
        fprintf(stderr, "sampling failed\n");
        return 1;
    }

    KfFlowConfig cfg;
    kf_flow_config_default(&cfg);

    KfTrajectory *traj = NULL;
    if (kf_flow_ascent(start, problem, &cfg, &traj) != KF_STATUS_OK) {
        fprintf(stderr, "flow failed\n");
        return 2;
    }

    uint64_t tau = 0;
    double lambda = 0.0, j0 = 0.0, jf = 0.0;
    bool converged = false;
    kf_trajectory_stats(traj, &tau, &lambda, &j0, &jf, &converged);
    printf("tau=%llu lambda=%.6f J0=%.6f Jf=%.6f converged=%d\n",
           (unsigned long long)tau, lambda, j0, jf, (int)converged);

    kf_trajectory_free(traj);
    kf_point_free(start);
    kf_problem_free(problem);
    return converged ? 0 : 2;
}
