// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Shared helpers for the integration suites: an independent dense oracle
//! that materializes the Kronecker factor `I_{N^2} x Theta` and evaluates
//! the textbook formulas directly, deliberately ignoring the blockwise
//! evaluation strategy of the library.

use krausflow::landscape::ControlProblem;
use krausflow::matrix::{from_diagonal, CMatrix};
use krausflow::stiefel::StiefelPoint;
use num_complex::Complex64;

pub fn kron_theta(p: &ControlProblem) -> CMatrix {
    let n = p.n();
    let big = n * n * n;
    let mut m = CMatrix::zeros(big, big);
    for b in 0..n * n {
        for r in 0..n {
            m[(b * n + r, b * n + r)] = Complex64::new(p.theta()[r], 0.0);
        }
    }
    m
}

pub fn rho_mat(p: &ControlProblem) -> CMatrix {
    from_diagonal(p.rho())
}

pub fn dense_objective(s: &StiefelPoint, p: &ControlProblem) -> f64 {
    let flat = s.flatten();
    let prod = &flat * rho_mat(p) * flat.adjoint() * kron_theta(p);
    (0..flat.nrows()).map(|i| prod[(i, i)].re).sum()
}

pub fn dense_gradient(s: &StiefelPoint, p: &ControlProblem) -> CMatrix {
    // (2 I - S S^dag)(I x Theta) S rho - S rho S^dag (I x Theta) S.
    let flat = s.flatten();
    let big = flat.nrows();
    let kt = kron_theta(p);
    let rho = rho_mat(p);
    let two_i = CMatrix::identity(big, big) * Complex64::new(2.0, 0.0);
    let left = (&two_i - &flat * flat.adjoint()) * &kt * &flat * &rho;
    let right = &flat * &rho * flat.adjoint() * &kt * &flat;
    left - right
}

pub fn dense_project(s: &StiefelPoint, a: &CMatrix) -> CMatrix {
    let flat = s.flatten();
    let c = flat.adjoint() * a + a.adjoint() * &flat;
    a - &flat * c * Complex64::new(0.5, 0.0)
}

pub fn dense_hessian_general(s: &StiefelPoint, p: &ControlProblem, v: &CMatrix) -> CMatrix {
    let flat = s.flatten();
    let kt = kron_theta(p);
    let rho = rho_mat(p);
    let two = Complex64::new(2.0, 0.0);
    let nabla = &kt * v * &rho * two
        - v * flat.adjoint() * &kt * &flat * &rho
        - &flat * v.adjoint() * &kt * &flat * &rho
        - &flat * flat.adjoint() * &kt * v * &rho
        - v * &rho * flat.adjoint() * &kt * &flat
        - &flat * &rho * v.adjoint() * &kt * &flat
        - &flat * &rho * flat.adjoint() * &kt * v;
    dense_project(s, &nabla)
}
