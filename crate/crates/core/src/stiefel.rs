// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! The complex Stiefel manifold of stacked Kraus operators.
//!
//! A Kraus map on an N-level system is carried by N^2 operators K_1..K_{N^2}
//! stacked into an N^3 x N matrix S with S^dag S = I_N. This module owns that
//! representation: construction and validation, block access, tangent
//! projection, polar retraction (drift repair), mixing by N^2 x N^2 unitaries,
//! the unitary submanifold, and uniform random sampling.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{
    ensure_finite, frob_norm, hermitian_eig, hs_inner_unchecked, identity, qr_phase_fixed, CMatrix,
};
use crate::sampling::complex_gaussian;

/// Orthonormality drift admitted by the [`StiefelPoint`] constructors, and
/// the hard ceiling enforced along every reported trajectory.
pub const DRIFT_TOLERANCE: f64 = 2e-4;

/// Skew-Hermiticity tolerance for tangent vectors.
pub const TANGENT_TOL: f64 = 1e-10;

/// Points farther than this from the manifold are rejected by [`retract`].
pub const RETRACT_MAX_DRIFT: f64 = 0.5;

/// A point on the Stiefel manifold: N^2 Kraus blocks of size N x N, stored
/// stacked as the flat N^3 x N matrix. Block i occupies rows i*N .. (i+1)*N.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    n: usize,
    mat: CMatrix,
}

impl StiefelPoint {
    /// Wraps a flat N^3 x N matrix, checking shape, finiteness and the
    /// orthonormality constraint (within [`DRIFT_TOLERANCE`]).
    pub fn from_flat(mat: CMatrix) -> Result<Self> {
        let n = check_flat_shape(&mat)?;
        ensure_finite(&mat, "StiefelPoint")?;
        let p = Self { n, mat };
        let drift = p.drift();
        if drift > DRIFT_TOLERANCE {
            return Err(Error::ContractViolation(format!(
                "StiefelPoint: ||S^dag S - I|| = {drift:.3e} exceeds {DRIFT_TOLERANCE:.1e}"
            )));
        }
        Ok(p)
    }

    /// Internal constructor for flow states whose drift is managed elsewhere.
    pub(crate) fn from_flat_unchecked(n: usize, mat: CMatrix) -> Self {
        debug_assert_eq!(mat.nrows(), n * n * n);
        debug_assert_eq!(mat.ncols(), n);
        Self { n, mat }
    }

    /// Builds a point from its N^2 Kraus blocks.
    pub fn from_blocks(blocks: &[CMatrix]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("no blocks given".into()));
        }
        let n = blocks[0].nrows();
        if blocks.len() != n * n || blocks.iter().any(|b| b.shape() != (n, n)) {
            return Err(Error::DimensionMismatch(format!(
                "from_blocks: expected {} blocks of {n}x{n}",
                n * n
            )));
        }
        let mut mat = CMatrix::zeros(n * n * n, n);
        for (i, b) in blocks.iter().enumerate() {
            mat.view_mut((i * n, 0), (n, n)).copy_from(b);
        }
        Self::from_flat(mat)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.n * self.n
    }

    /// The flat N^3 x N Stiefel matrix (block i in rows i*N..(i+1)*N).
    pub fn flatten(&self) -> CMatrix {
        self.mat.clone()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.mat
    }

    /// Kraus block `i` (0-based), copied out.
    pub fn block(&self, i: usize) -> CMatrix {
        self.mat.view((i * self.n, 0), (self.n, self.n)).into()
    }

    /// `S^dag S`, the N x N Gram matrix.
    pub fn gram(&self) -> CMatrix {
        self.mat.ad_mul(&self.mat)
    }

    /// `||S^dag S - I||_F`: distance from exact orthonormality.
    pub fn drift(&self) -> f64 {
        (self.gram() - identity(self.n)).norm()
    }

    /// The induced channel applied to a density matrix: `sum_i K_i rho K_i^dag`.
    pub fn apply_channel(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.shape() != (self.n, self.n) {
            return Err(Error::DimensionMismatch(format!(
                "apply_channel: rho is {:?}, expected {}x{}",
                rho.shape(),
                self.n,
                self.n
            )));
        }
        let mut out = CMatrix::zeros(self.n, self.n);
        for i in 0..self.num_blocks() {
            let k = self.mat.view((i * self.n, 0), (self.n, self.n));
            out += k * rho * k.adjoint();
        }
        Ok(out)
    }
}

fn check_flat_shape(mat: &CMatrix) -> Result<usize> {
    let n = mat.ncols();
    if n == 0 || mat.nrows() != n * n * n {
        return Err(Error::DimensionMismatch(format!(
            "expected an N^3 x N matrix, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    Ok(n)
}

/// A tangent direction at some base point, stacked like [`StiefelPoint`].
/// At its base point S it satisfies `S^dag (dS)` skew-Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    n: usize,
    mat: CMatrix,
}

impl TangentVector {
    pub(crate) fn from_flat_unchecked(n: usize, mat: CMatrix) -> Self {
        Self { n, mat }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn flatten(&self) -> CMatrix {
        self.mat.clone()
    }

    pub fn block(&self, i: usize) -> CMatrix {
        self.mat.view((i * self.n, 0), (self.n, self.n)).into()
    }

    pub fn norm(&self) -> f64 {
        frob_norm(&self.mat)
    }

    /// Skew-Hermiticity defect of `S^dag (dS)` at the given base point.
    pub fn tangency_defect(&self, base: &StiefelPoint) -> f64 {
        let b = base.as_matrix().ad_mul(&self.mat);
        (&b + b.adjoint()).norm()
    }

    /// Checks the tangent invariant at `base` within [`TANGENT_TOL`].
    pub fn is_tangent_at(&self, base: &StiefelPoint) -> bool {
        self.tangency_defect(base) <= TANGENT_TOL * self.norm().max(1.0)
    }
}

/// Orthogonal projection of an ambient direction onto the tangent space at
/// `s`: `P_S(A) = A - S (S^dag A + A^dag S)/2`, computed blockwise.
pub fn tangent_project(s: &StiefelPoint, a: &CMatrix) -> Result<TangentVector> {
    if a.shape() != s.as_matrix().shape() {
        return Err(Error::DimensionMismatch(format!(
            "tangent_project: ambient value is {:?}, expected {:?}",
            a.shape(),
            s.as_matrix().shape()
        )));
    }
    Ok(tangent_project_unchecked(s.n, s.as_matrix(), a))
}

pub(crate) fn tangent_project_unchecked(n: usize, s: &CMatrix, a: &CMatrix) -> TangentVector {
    // C = S^dag A, then out = A - S (C + C^dag)/2.
    let c = s.ad_mul(a);
    let sym = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let mut out = a.clone();
    out.gemm(Complex64::new(-1.0, 0.0), s, &sym, Complex64::new(1.0, 0.0));
    TangentVector::from_flat_unchecked(n, out)
}

/// Polar retraction: returns the nearest matrix with exactly orthonormal
/// columns, `S (S^dag S)^{-1/2}`. Used as drift repair during integration.
pub fn retract(mat: &CMatrix) -> Result<StiefelPoint> {
    let n = check_flat_shape(mat)?;
    ensure_finite(mat, "retract input")?;
    let gram = mat.ad_mul(mat);
    let drift = (&gram - identity(n)).norm();
    if drift > RETRACT_MAX_DRIFT {
        return Err(Error::ContractViolation(format!(
            "retract: input is {drift:.3e} from the manifold, beyond {RETRACT_MAX_DRIFT}"
        )));
    }
    let spec = hermitian_eig(&gram)?;
    let min_eig = spec.min_eigenvalue();
    if min_eig <= 1e-12 {
        return Err(Error::DegenerateInput(format!(
            "retract: S^dag S has eigenvalue {min_eig:.3e}"
        )));
    }
    // (S^dag S)^{-1/2} via the eigenbasis.
    let inv_sqrt: Vec<f64> = spec.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()).collect();
    let v = &spec.eigenvectors;
    let mut core = CMatrix::zeros(n, n);
    for (j, &w) in inv_sqrt.iter().enumerate() {
        let col = v.column(j);
        for r in 0..n {
            for c in 0..n {
                core[(r, c)] += col[r] * col[c].conj() * w;
            }
        }
    }
    Ok(StiefelPoint::from_flat_unchecked(n, mat * core))
}

/// An N^2 x N^2 unitary mixing matrix acting on the Kraus blocks. Every such
/// transform re-parametrizes the same physical channel.
#[derive(Debug, Clone)]
pub struct WTransform {
    u: CMatrix,
}

impl WTransform {
    /// Validates unitarity within 1e-10.
    pub fn new(u: CMatrix) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "WTransform: {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let m = u.nrows();
        let defect = (u.ad_mul(&u) - identity(m)).norm();
        if defect > 1e-10 {
            return Err(Error::ContractViolation(format!(
                "WTransform: unitarity defect {defect:.3e}"
            )));
        }
        Ok(Self { u })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.u
    }

    pub fn block_count(&self) -> usize {
        self.u.nrows()
    }
}

/// Applies the mixing `K~_j = sum_i u_{ji} K_i` (the left action `(U x I) S`
/// on the flat matrix, computed without materializing the Kronecker factor).
pub fn apply_w(w: &WTransform, s: &StiefelPoint) -> Result<StiefelPoint> {
    let n = s.n();
    if w.block_count() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "apply_w: mixer is {}x{}, point has {} blocks",
            w.block_count(),
            w.block_count(),
            n * n
        )));
    }
    let mut out = CMatrix::zeros(n * n * n, n);
    for j in 0..n * n {
        let mut acc = out.view_mut((j * n, 0), (n, n));
        for i in 0..n * n {
            let u_ji = w.u[(j, i)];
            if u_ji.norm_sqr() == 0.0 {
                continue;
            }
            let k = s.as_matrix().view((i * n, 0), (n, n));
            for r in 0..n {
                for c in 0..n {
                    acc[(r, c)] += u_ji * k[(r, c)];
                }
            }
        }
    }
    Ok(StiefelPoint::from_flat_unchecked(n, out))
}

/// Uniform random point: phase-fixed QR of an N^3 x N complex Gaussian
/// matrix. The induced distribution is invariant under left multiplication
/// by unitaries.
pub fn random_stiefel<R: Rng>(n: usize, rng: &mut R) -> StiefelPoint {
    assert!(n >= 2, "random_stiefel requires n >= 2");
    loop {
        let g = complex_gaussian(n * n * n, n, rng);
        if let Ok((q, _)) = qr_phase_fixed(&g) {
            return StiefelPoint::from_flat_unchecked(n, q);
        }
    }
}

/// The point of the unitary submanifold determined by `u`: all N^2 blocks
/// equal `u / N`. Its channel action is `rho -> u rho u^dag`.
pub fn unitary_point(u: &CMatrix) -> Result<StiefelPoint> {
    if !u.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "unitary_point: {}x{}",
            u.nrows(),
            u.ncols()
        )));
    }
    let n = u.nrows();
    let defect = (u.ad_mul(u) - identity(n)).norm();
    if defect > 1e-10 {
        return Err(Error::ContractViolation(format!(
            "unitary_point: unitarity defect {defect:.3e}"
        )));
    }
    let scaled = u / Complex64::new(n as f64, 0.0);
    let mut mat = CMatrix::zeros(n * n * n, n);
    for i in 0..n * n {
        mat.view_mut((i * n, 0), (n, n)).copy_from(&scaled);
    }
    Ok(StiefelPoint::from_flat_unchecked(n, mat))
}

/// How far a point sits from the unitary submanifold: the worst blockwise
/// deviation from the block average, plus the unitarity defect of N times
/// that average. Zero exactly on the submanifold.
pub fn distance_to_unitary_submanifold(s: &StiefelPoint) -> f64 {
    let n = s.n();
    let blocks = s.num_blocks();
    let mut mean = CMatrix::zeros(n, n);
    for i in 0..blocks {
        mean += s.as_matrix().view((i * n, 0), (n, n));
    }
    mean /= Complex64::new(blocks as f64, 0.0);
    let mut spread: f64 = 0.0;
    for i in 0..blocks {
        let d = (s.as_matrix().view((i * n, 0), (n, n)) - &mean).norm();
        spread = spread.max(d);
    }
    let scaled = &mean * Complex64::new(n as f64, 0.0);
    let defect = (scaled.ad_mul(&scaled) - identity(n)).norm();
    spread + defect
}

/// Hilbert-Schmidt inner product of two tangent vectors.
pub fn tangent_inner(a: &TangentVector, b: &TangentVector) -> f64 {
    hs_inner_unchecked(a.as_matrix(), b.as_matrix())
}
