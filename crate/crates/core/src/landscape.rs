// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! The control problem and its calculus on the Stiefel manifold: objective
//! value in two algebraically equivalent forms, analytic gradient,
//! Hessian-vector products, critical-point reports, and the dimension of the
//! optimum manifold.
//!
//! The Kronecker factor `I_{N^2} x Theta` that appears throughout the
//! formulas is never materialized (it would be N^3 x N^3); every contraction
//! is done blockwise through N x N auxiliaries.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::{hermitian_eig, hs_inner_unchecked, CMatrix};
use crate::stiefel::{tangent_project, tangent_project_unchecked, StiefelPoint, TangentVector};

/// Entries of rho below this count as zero eigenvalues.
pub const RHO_ZERO_TOL: f64 = 1e-12;

/// Gradient norm below which a point counts as stationary.
pub const STATIONARITY_TOL: f64 = 1e-6;

/// Relative tolerance for Hessian null-space counting.
pub const HESSIAN_NULL_TOL: f64 = 1e-6;

/// A control problem in the simultaneously diagonal form: the initial state
/// rho and the observable Theta share an eigenbasis, so only their spectra
/// matter. `d0` counts the zero eigenvalues of rho and `e1` the multiplicity
/// of the top eigenvalue of Theta.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    n: usize,
    rho: Vec<f64>,
    theta: Vec<f64>,
    d0: usize,
    e1: usize,
}

impl ControlProblem {
    pub fn new(rho: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let n = rho.len();
        if n == 0 || theta.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "ControlProblem: rho has {} entries, theta {}",
                rho.len(),
                theta.len()
            )));
        }
        if rho.iter().any(|&v| !v.is_finite()) || theta.iter().any(|&v| !v.is_finite()) {
            return Err(Error::NonFinite("ControlProblem spectra".into()));
        }
        if rho.iter().any(|&v| v < -1e-14) {
            return Err(Error::ContractViolation(
                "ControlProblem: rho has negative entries".into(),
            ));
        }
        let mut rho = rho;
        for v in rho.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = rho.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::ContractViolation(format!(
                "ControlProblem: Tr rho = {total}, expected 1"
            )));
        }
        let d0 = rho.iter().filter(|&&v| v < RHO_ZERO_TOL).count();
        let t_max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e1 = theta.iter().filter(|&&v| (v - t_max).abs() < 1e-12).count();
        Ok(Self {
            n,
            rho,
            theta,
            d0,
            e1,
        })
    }

    /// Problem with the projector target `Theta = |N><N|`.
    pub fn with_projector_target(rho: Vec<f64>) -> Result<Self> {
        let n = rho.len();
        let mut theta = vec![0.0; n];
        theta[n - 1] = 1.0;
        Self::new(rho, theta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn e1(&self) -> usize {
        self.e1
    }

    pub fn theta_max(&self) -> f64 {
        self.theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn theta_min(&self) -> f64 {
        self.theta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue of rho: the unitary-control ceiling for a
    /// projector observable.
    pub fn rho_max(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_shapes(s: &StiefelPoint, p: &ControlProblem) -> Result<()> {
    if s.n() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "point has N = {}, problem has N = {}",
            s.n(),
            p.n()
        )));
    }
    Ok(())
}

/// `(I x Theta) S`: every block row r scaled by theta_r.
fn theta_scaled(flat: &CMatrix, theta: &[f64]) -> CMatrix {
    let n = theta.len();
    let mut out = flat.clone();
    for gr in 0..out.nrows() {
        let w = theta[gr % n];
        for c in 0..n {
            out[(gr, c)] *= w;
        }
    }
    out
}

/// Scales column c by `w[c]` in place.
fn scale_cols(m: &mut CMatrix, w: &[f64]) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            m[(r, c)] *= w[c];
        }
    }
}

/// `M rho + rho M` for diagonal rho, done entrywise.
fn sym_weight(m: &CMatrix, rho: &[f64]) -> CMatrix {
    let n = rho.len();
    CMatrix::from_fn(n, n, |r, c| m[(r, c)] * (rho[r] + rho[c]))
}

/// Objective `J(S) = Tr[S rho S^dag (I x Theta)]`, evaluated blockwise as
/// `sum_i Tr[K_i rho K_i^dag Theta]` through the auxiliary
/// `M = S^dag (I x Theta) S`.
pub fn objective(s: &StiefelPoint, p: &ControlProblem) -> Result<f64> {
    check_shapes(s, p)?;
    Ok(objective_flat(s.as_matrix(), p))
}

pub(crate) fn objective_flat(flat: &CMatrix, p: &ControlProblem) -> f64 {
    let ts = theta_scaled(flat, &p.theta);
    let m = flat.ad_mul(&ts);
    (0..p.n).map(|c| m[(c, c)].re * p.rho[c]).sum()
}

/// Objective in the Y-vector form `sum_{i,j} ||Y_j^i||^2 rho_i theta_j`,
/// where `(Y_j^i)_l = (K_l)_{ji}`. Agrees with [`objective`] to roundoff;
/// the two are kept as genuinely distinct evaluation routes.
pub fn objective_yform(s: &StiefelPoint, p: &ControlProblem) -> Result<f64> {
    check_shapes(s, p)?;
    let n = p.n;
    let flat = s.as_matrix();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let w = p.rho[i] * p.theta[j];
            if w == 0.0 {
                continue;
            }
            let mut y_norm2 = 0.0;
            for l in 0..n * n {
                y_norm2 += flat[(l * n + j, i)].norm_sqr();
            }
            acc += y_norm2 * w;
        }
    }
    Ok(acc)
}

/// Riemannian gradient of J at `s`:
/// `grad J = 2 (I x Theta) S rho - S (M rho + rho M)` with
/// `M = S^dag (I x Theta) S`. Blockwise: block i is
/// `2 Theta K_i rho - K_i (M rho + rho M)`.
pub fn gradient(s: &StiefelPoint, p: &ControlProblem) -> Result<TangentVector> {
    check_shapes(s, p)?;
    Ok(TangentVector::from_flat_unchecked(
        s.n(),
        gradient_flat(s.as_matrix(), p),
    ))
}

pub(crate) fn gradient_flat(flat: &CMatrix, p: &ControlProblem) -> CMatrix {
    let ts = theta_scaled(flat, &p.theta);
    let m = flat.ad_mul(&ts);
    let a = sym_weight(&m, &p.rho);
    let mut out = ts;
    let two_rho: Vec<f64> = p.rho.iter().map(|&v| 2.0 * v).collect();
    scale_cols(&mut out, &two_rho);
    out.gemm(Complex64::new(-1.0, 0.0), flat, &a, Complex64::new(1.0, 0.0));
    out
}

/// Which Hessian expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianForm {
    /// The covariant derivative of the gradient field followed by tangent
    /// projection; valid at every point.
    General,
    /// The reduced seven-term expression valid where the gradient vanishes.
    Critical,
}

/// Hessian-vector product `Hess J(S)(dS)`.
///
/// Both forms are computed blockwise through the N x N auxiliaries
/// `M = S^dag (I x Theta) S`, `P = S^dag (I x Theta) dS`, `B = S^dag dS`.
/// The `Critical` form additionally requires the gradient norm at `s` to be
/// at most the stationarity tolerance.
pub fn hessian_apply(
    s: &StiefelPoint,
    p: &ControlProblem,
    v: &TangentVector,
    form: HessianForm,
) -> Result<TangentVector> {
    check_shapes(s, p)?;
    if v.n() != s.n() {
        return Err(Error::DimensionMismatch(format!(
            "hessian_apply: tangent has N = {}, point N = {}",
            v.n(),
            s.n()
        )));
    }
    let flat = s.as_matrix();
    let dv = v.as_matrix();
    let ts = theta_scaled(flat, &p.theta);
    let tv = theta_scaled(dv, &p.theta);
    let m = flat.ad_mul(&ts);
    let pm = flat.ad_mul(&tv); // P = S^dag (I x Theta) dS
    let neg = Complex64::new(-1.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    match form {
        HessianForm::General => {
            // A = 2 (I x Theta) dS rho - dS (M rho + rho M) - S (Q rho + rho Q),
            // Q = P + P^dag; then project onto the tangent space.
            let q = &pm + pm.adjoint();
            let mut acc = tv;
            let two_rho: Vec<f64> = p.rho.iter().map(|&v| 2.0 * v).collect();
            scale_cols(&mut acc, &two_rho);
            acc.gemm(neg, dv, &sym_weight(&m, &p.rho), one);
            acc.gemm(neg, flat, &sym_weight(&q, &p.rho), one);
            Ok(tangent_project_unchecked(s.n(), flat, &acc))
        }
        HessianForm::Critical => {
            let gnorm = gradient(s, p)?.norm();
            if gnorm > STATIONARITY_TOL {
                return Err(Error::ContractViolation(format!(
                    "critical Hessian form requested at gradient norm {gnorm:.3e}"
                )));
            }
            let b = flat.ad_mul(dv);
            // 2 (I x Theta) dS rho
            let mut acc = tv;
            let two_rho: Vec<f64> = p.rho.iter().map(|&v| 2.0 * v).collect();
            scale_cols(&mut acc, &two_rho);
            // - dS (M rho + rho M)
            acc.gemm(neg, dv, &sym_weight(&m, &p.rho), one);
            // - S (P rho + rho P^dag - B M rho)
            let mut p_rho = pm.clone();
            scale_cols(&mut p_rho, &p.rho);
            let mut rho_pdag = pm.adjoint();
            for r in 0..p.n {
                for c in 0..p.n {
                    rho_pdag[(r, c)] *= p.rho[r];
                }
            }
            let mut m_rho = m.clone();
            scale_cols(&mut m_rho, &p.rho);
            let core = &p_rho + &rho_pdag - &b * &m_rho;
            acc.gemm(neg, flat, &core, one);
            // + (I x Theta) S rho B^dag
            let mut rho_bdag = b.adjoint();
            for r in 0..p.n {
                for c in 0..p.n {
                    rho_bdag[(r, c)] *= p.rho[r];
                }
            }
            acc.gemm(one, &ts, &rho_bdag, one);
            Ok(TangentVector::from_flat_unchecked(s.n(), acc))
        }
    }
}

/// Second-order classification of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// Stationary with no significantly positive curvature direction.
    Max,
    /// Stationary with at least one ascent direction left.
    SaddleOrMin,
    /// Gradient norm above the stationarity tolerance.
    Nonstationary,
}

/// Gradient norm plus the full tangent-restricted Hessian spectrum.
#[derive(Debug, Clone)]
pub struct CriticalReport {
    pub gradient_norm: f64,
    /// Eigenvalues in descending order, in an orthonormal real basis of the
    /// tangent space (dimension 2N^4 - N^2).
    pub hessian_eigenvalues: Vec<f64>,
    pub classification: Classification,
    /// Count of eigenvalues within the null tolerance of zero.
    pub null_dimension: usize,
}

/// Real dimension of the tangent space at any point of the manifold.
pub fn tangent_dimension(n: usize) -> usize {
    2 * n.pow(4) - n * n
}

/// Builds an orthonormal basis of the real tangent space at `s` by
/// projecting the ambient elementary directions and Gram-Schmidt filtering.
pub(crate) fn tangent_basis(s: &StiefelPoint) -> Result<Vec<TangentVector>> {
    let n = s.n();
    let rows = n * n * n;
    let want = tangent_dimension(n);
    let mut basis: Vec<CMatrix> = Vec::with_capacity(want);
    for c in 0..n {
        for gr in 0..rows {
            for unit in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut e = CMatrix::zeros(rows, n);
                e[(gr, c)] = unit;
                let mut cand = tangent_project(s, &e)?.flatten();
                // Two Gram-Schmidt passes keep the basis orthonormal to
                // machine precision even for late, nearly dependent entries.
                for _ in 0..2 {
                    for q in &basis {
                        let coef = hs_inner_unchecked(q, &cand);
                        cand.zip_apply(q, |x, y| *x -= y * coef);
                    }
                }
                let norm = cand.norm();
                if norm > 1e-8 {
                    cand /= Complex64::new(norm, 0.0);
                    basis.push(cand);
                }
            }
        }
    }
    if basis.len() != want {
        return Err(Error::DegenerateInput(format!(
            "tangent basis has {} elements, expected {want}",
            basis.len()
        )));
    }
    Ok(basis
        .into_iter()
        .map(|m| TangentVector::from_flat_unchecked(n, m))
        .collect())
}

/// Full second-order report at `s`: gradient norm, tangent-restricted
/// Hessian eigenvalues, classification and null-space count.
///
/// Limited to N <= 4: the dense tangent basis has 2N^4 - N^2 elements and
/// each Hessian column costs one operator application.
pub fn critical_report(s: &StiefelPoint, p: &ControlProblem) -> Result<CriticalReport> {
    check_shapes(s, p)?;
    if s.n() > 4 {
        return Err(Error::Capability(format!(
            "critical_report supports N <= 4, got N = {}",
            s.n()
        )));
    }
    let gradient_norm = gradient(s, p)?.norm();
    let basis = tangent_basis(s)?;
    let dim = basis.len();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (b_idx, b_vec) in basis.iter().enumerate() {
        let hb = hessian_apply(s, p, b_vec, HessianForm::General)?;
        for (a_idx, a_vec) in basis.iter().enumerate() {
            h[(a_idx, b_idx)] = hs_inner_unchecked(a_vec.as_matrix(), hb.as_matrix());
        }
    }
    // Symmetrize away the floating-point asymmetry before factoring.
    let h = (&h + h.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let scale = eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let null_tol = HESSIAN_NULL_TOL * scale.max(1.0);
    let null_dimension = eigenvalues.iter().filter(|&&v| v.abs() <= null_tol).count();
    let classification = if gradient_norm > STATIONARITY_TOL {
        Classification::Nonstationary
    } else if eigenvalues[0] <= null_tol {
        Classification::Max
    } else {
        Classification::SaddleOrMin
    };
    Ok(CriticalReport {
        gradient_norm,
        hessian_eigenvalues: eigenvalues,
        classification,
        null_dimension,
    })
}

/// Dimension of the optimum manifold `M_max`:
/// `2 (d0 + e1) N^3 - (2 d0 e1 + 1) N^2`.
pub fn dim_max_manifold(n: usize, d0: usize, e1: usize) -> Result<u64> {
    if n < 1 || d0 >= n {
        return Err(Error::ContractViolation(format!(
            "dim_max_manifold: need 0 <= d0 <= N-1, got N={n}, d0={d0}"
        )));
    }
    if e1 < 1 || e1 > n {
        return Err(Error::ContractViolation(format!(
            "dim_max_manifold: need 1 <= e1 <= N, got N={n}, e1={e1}"
        )));
    }
    let (n, d0, e1) = (n as u64, d0 as u64, e1 as u64);
    Ok(2 * (d0 + e1) * n.pow(3) - (2 * d0 * e1 + 1) * n.pow(2))
}

/// Result of rotating a general (rho, Theta) pair to the simultaneously
/// diagonal form. The objective is preserved under the block map
/// `K -> theta_basis^dag K theta_basis omega`; for an already-diagonal
/// observable this reduces to `K -> K omega`.
#[derive(Debug, Clone)]
pub struct Canonicalization {
    pub problem: ControlProblem,
    /// Eigenbasis of the observable (identity when it was already diagonal).
    pub theta_basis: CMatrix,
    /// Diagonalizing rotation of rho within the observable eigenbasis.
    pub omega: CMatrix,
}

fn is_diagonal(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|r| (0..n).all(|c| r == c || m[(r, c)].norm() <= tol))
}

/// Rotates a Hermitian pair (rho, Theta) into the diagonal convention used
/// by the rest of the library: Theta eigenvalues ascending (top eigenvalue
/// on the trailing indices), rho eigenvalues descending (zeros trailing).
pub fn canonicalize(rho_full: &CMatrix, theta_full: &CMatrix) -> Result<Canonicalization> {
    if !rho_full.is_square() || rho_full.shape() != theta_full.shape() {
        return Err(Error::DimensionMismatch(format!(
            "canonicalize: rho is {:?}, theta is {:?}",
            rho_full.shape(),
            theta_full.shape()
        )));
    }
    let n = rho_full.nrows();
    let trace: f64 = (0..n).map(|i| rho_full[(i, i)].re).sum();
    if (trace - 1.0).abs() > 1e-10 {
        return Err(Error::ContractViolation(format!(
            "canonicalize: Tr rho = {trace}, expected 1"
        )));
    }

    // Observable eigenbasis, ascending so the maximum sits at index N.
    let theta_sorted_ascending = |m: &CMatrix| -> bool {
        (0..n - 1).all(|i| m[(i, i)].re <= m[(i + 1, i + 1)].re + 1e-14)
    };
    let (theta_basis, theta_diag): (CMatrix, Vec<f64>) =
        if is_diagonal(theta_full, 1e-12) && theta_sorted_ascending(theta_full) {
            (
                CMatrix::identity(n, n),
                (0..n).map(|i| theta_full[(i, i)].re).collect(),
            )
        } else {
            let spec = hermitian_eig(theta_full)?;
            // hermitian_eig sorts descending; reverse to ascending.
            let cols: Vec<usize> = (0..n).rev().collect();
            let v = CMatrix::from_fn(n, n, |r, c| spec.eigenvectors[(r, cols[c])]);
            let vals: Vec<f64> = cols.iter().map(|&c| spec.eigenvalues[c]).collect();
            (v, vals)
        };

    // rho in that basis, then its own eigenbasis, descending (zeros last).
    let rho_in_basis = theta_basis.ad_mul(&(rho_full * &theta_basis));
    let rho_descending = |m: &CMatrix| -> bool {
        (0..n - 1).all(|i| m[(i, i)].re >= m[(i + 1, i + 1)].re - 1e-14)
    };
    let (omega, mut sigma): (CMatrix, Vec<f64>) =
        if is_diagonal(&rho_in_basis, 1e-12) && rho_descending(&rho_in_basis) {
            (
                CMatrix::identity(n, n),
                (0..n).map(|i| rho_in_basis[(i, i)].re).collect(),
            )
        } else {
            let spec = hermitian_eig(&rho_in_basis)?;
            (spec.eigenvectors.clone(), spec.eigenvalues.clone())
        };

    if sigma.iter().any(|&v| v < -1e-10) {
        return Err(Error::ContractViolation(format!(
            "canonicalize: rho has eigenvalue {:.3e} < 0",
            sigma.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    // Snap tolerance-level noise so the diagonal problem is exactly a state.
    for v in sigma.iter_mut() {
        if *v < RHO_ZERO_TOL {
            *v = 0.0;
        }
    }
    let total: f64 = sigma.iter().sum();
    for v in sigma.iter_mut() {
        *v /= total;
    }
    let problem = ControlProblem::new(sigma, theta_diag)?;
    Ok(Canonicalization {
        problem,
        theta_basis,
        omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{from_diagonal, hs_inner, identity};
    use crate::sampling::{
        complex_gaussian, haar_unitary, random_rho, uniform_simplex, SeededStream, ZeroPlacement,
    };
    use crate::stiefel::{apply_w, random_stiefel, retract, unitary_point, WTransform};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn problem(rho: &[f64], theta: &[f64]) -> ControlProblem {
        ControlProblem::new(rho.to_vec(), theta.to_vec()).unwrap()
    }

    fn random_problem<R: Rng>(n: usize, rng: &mut R) -> ControlProblem {
        let rho = uniform_simplex(n, rng);
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        theta.sort_by(|a, b| a.partial_cmp(b).unwrap());
        problem(&rho, &theta)
    }

    /// Dense oracle: materializes I_{N^2} x Theta and evaluates the
    /// textbook formulas directly. Test-only; deliberately ignores the
    /// blockwise evaluation strategy of the implementation.
    mod dense {
        use super::*;

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

        pub fn objective(s: &StiefelPoint, p: &ControlProblem) -> f64 {
            let flat = s.flatten();
            let prod = &flat * rho_mat(p) * flat.adjoint() * kron_theta(p);
            (0..flat.nrows()).map(|i| prod[(i, i)].re).sum()
        }

        pub fn gradient(s: &StiefelPoint, p: &ControlProblem) -> CMatrix {
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

        pub fn project(s: &StiefelPoint, a: &CMatrix) -> CMatrix {
            let flat = s.flatten();
            let c = flat.adjoint() * a + a.adjoint() * &flat;
            a - &flat * c * Complex64::new(0.5, 0.0)
        }

        pub fn hessian_general(s: &StiefelPoint, p: &ControlProblem, v: &CMatrix) -> CMatrix {
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
            project(s, &nabla)
        }
    }

    #[test]
    fn objective_is_one_for_identity_observable() {
        let mut rng = SeededStream::new(41, 0).rng();
        for _ in 0..5 {
            let s = random_stiefel(3, &mut rng);
            let p = problem(&uniform_simplex(3, &mut rng), &[1.0, 1.0, 1.0]);
            assert_relative_eq!(objective(&s, &p).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn objective_swap_channel_reaches_one() {
        // All blocks X/2 map |1><1| onto |2><2| exactly.
        let x = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let s = StiefelPoint::from_blocks(&vec![x; 4]).unwrap();
        let p = problem(&[1.0, 0.0], &[0.0, 1.0]);
        assert_relative_eq!(objective(&s, &p).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_forms_agree() {
        let mut rng = SeededStream::new(42, 0).rng();
        for n in [2usize, 3, 4] {
            for _ in 0..100 {
                let s = random_stiefel(n, &mut rng);
                let p = random_problem(n, &mut rng);
                let a = objective(&s, &p).unwrap();
                let b = objective_yform(&s, &p).unwrap();
                assert!((a - b).abs() < 1e-12, "forms differ: {a} vs {b}");
            }
        }
    }

    #[test]
    fn objective_matches_dense_oracle_and_bounds() {
        let mut rng = SeededStream::new(43, 0).rng();
        for _ in 0..25 {
            let s = random_stiefel(2, &mut rng);
            let p = random_problem(2, &mut rng);
            let j = objective(&s, &p).unwrap();
            assert!((j - dense::objective(&s, &p)).abs() < 1e-12);
            assert!(j >= p.theta_min() - 1e-10);
            assert!(j <= p.theta_max() + 1e-10);
        }
    }

    #[test]
    fn objective_single_surviving_term() {
        // rho = (1,0,...,0), Theta = |N><N|: J = ||Y_N^1||^2.
        let mut rng = SeededStream::new(44, 0).rng();
        let n = 3;
        let s = random_stiefel(n, &mut rng);
        let p = ControlProblem::with_projector_target(crate::sampling::pure_state(n)).unwrap();
        let flat = s.flatten();
        let y: f64 = (0..n * n).map(|l| flat[(l * n + (n - 1), 0)].norm_sqr()).sum();
        assert_relative_eq!(objective(&s, &p).unwrap(), y, epsilon = 1e-12);
    }

    #[test]
    fn objective_w_invariance() {
        let mut rng = SeededStream::new(45, 0).rng();
        for _ in 0..10 {
            let s = random_stiefel(3, &mut rng);
            let p = random_problem(3, &mut rng);
            let w = WTransform::new(haar_unitary(9, &mut rng)).unwrap();
            let j0 = objective(&s, &p).unwrap();
            let j1 = objective(&apply_w(&w, &s).unwrap(), &p).unwrap();
            assert!((j0 - j1).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_vanishes_at_diagonal_unitary_point() {
        let s = unitary_point(&identity(3)).unwrap();
        let p = problem(&[0.5, 0.3, 0.2], &[0.0, 0.25, 1.0]);
        assert!(gradient(&s, &p).unwrap().norm() < 1e-14);
    }

    #[test]
    fn gradient_matches_dense_oracle() {
        let mut rng = SeededStream::new(46, 0).rng();
        for _ in 0..25 {
            let s = random_stiefel(2, &mut rng);
            let p = random_problem(2, &mut rng);
            let g = gradient(&s, &p).unwrap();
            let dense_g = dense::gradient(&s, &p);
            assert!((g.as_matrix() - &dense_g).norm() < 1e-10);
            assert!(g.is_tangent_at(&s));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededStream::new(47, 0).rng();
        let h = 1e-6;
        for n in [2usize, 3] {
            for _ in 0..10 {
                let s = random_stiefel(n, &mut rng);
                let p = random_problem(n, &mut rng);
                let g = gradient(&s, &p).unwrap();
                let d = crate::stiefel::tangent_project(
                    &s,
                    &complex_gaussian(n * n * n, n, &mut rng),
                )
                .unwrap();
                let predicted = hs_inner(g.as_matrix(), d.as_matrix()).unwrap();
                let plus = retract(&(s.as_matrix() + d.as_matrix() * Complex64::new(h, 0.0)))
                    .unwrap();
                let minus = retract(&(s.as_matrix() - d.as_matrix() * Complex64::new(h, 0.0)))
                    .unwrap();
                let fd = (objective(&plus, &p).unwrap() - objective(&minus, &p).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - predicted).abs() <= 1e-6 * predicted.abs().max(1e-3),
                    "fd {fd} vs analytic {predicted}"
                );
            }
        }
    }

    #[test]
    fn unitary_submanifold_gradient_structure() {
        // At S in S_U, all gradient blocks coincide and U^dag (N * block)
        // is skew-Hermitian.
        let mut rng = SeededStream::new(48, 0).rng();
        for _ in 0..10 {
            let u = haar_unitary(3, &mut rng);
            let s = unitary_point(&u).unwrap();
            let p = random_problem(3, &mut rng);
            let g = gradient(&s, &p).unwrap();
            let b0 = g.block(0);
            for i in 1..9 {
                assert!((g.block(i) - &b0).norm() < 1e-10);
            }
            let z = u.ad_mul(&(&b0 * Complex64::new(3.0, 0.0)));
            assert!((&z + z.adjoint()).norm() < 1e-10);
        }
    }

    #[test]
    fn hessian_general_matches_dense_oracle() {
        let mut rng = SeededStream::new(49, 0).rng();
        for _ in 0..25 {
            let s = random_stiefel(2, &mut rng);
            let p = random_problem(2, &mut rng);
            let v = crate::stiefel::tangent_project(&s, &complex_gaussian(8, 2, &mut rng)).unwrap();
            let h = hessian_apply(&s, &p, &v, HessianForm::General).unwrap();
            let dense_h = dense::hessian_general(&s, &p, v.as_matrix());
            assert!((h.as_matrix() - &dense_h).norm() < 1e-10);
        }
    }

    #[test]
    fn hessian_is_linear_and_self_adjoint() {
        let mut rng = SeededStream::new(50, 0).rng();
        let s = random_stiefel(3, &mut rng);
        let p = random_problem(3, &mut rng);
        let v1 = crate::stiefel::tangent_project(&s, &complex_gaussian(27, 3, &mut rng)).unwrap();
        let v2 = crate::stiefel::tangent_project(&s, &complex_gaussian(27, 3, &mut rng)).unwrap();
        let combo = TangentVector::from_flat_unchecked(
            3,
            v1.as_matrix() * Complex64::new(0.7, 0.0) + v2.as_matrix() * Complex64::new(-1.3, 0.0),
        );
        let h1 = hessian_apply(&s, &p, &v1, HessianForm::General).unwrap();
        let h2 = hessian_apply(&s, &p, &v2, HessianForm::General).unwrap();
        let hc = hessian_apply(&s, &p, &combo, HessianForm::General).unwrap();
        let expect = h1.as_matrix() * Complex64::new(0.7, 0.0)
            + h2.as_matrix() * Complex64::new(-1.3, 0.0);
        assert!((hc.as_matrix() - expect).norm() < 1e-10);
        let lhs = hs_inner(h1.as_matrix(), v2.as_matrix()).unwrap();
        let rhs = hs_inner(v1.as_matrix(), h2.as_matrix()).unwrap();
        assert!((lhs - rhs).abs() < 1e-8);
    }

    #[test]
    fn hessian_critical_form_requires_stationarity() {
        let mut rng = SeededStream::new(51, 0).rng();
        let s = random_stiefel(2, &mut rng);
        let p = random_problem(2, &mut rng);
        let v = crate::stiefel::tangent_project(&s, &complex_gaussian(8, 2, &mut rng)).unwrap();
        assert!(matches!(
            hessian_apply(&s, &p, &v, HessianForm::Critical),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn critical_report_dimensions_and_nonstationary() {
        let mut rng = SeededStream::new(52, 0).rng();
        let s = random_stiefel(2, &mut rng);
        let p = ControlProblem::with_projector_target(vec![1.0, 0.0]).unwrap();
        let report = critical_report(&s, &p).unwrap();
        assert_eq!(report.hessian_eigenvalues.len(), 28);
        assert_eq!(tangent_dimension(2), 28);
        assert_eq!(report.classification, Classification::Nonstationary);
    }

    #[test]
    fn critical_report_rejects_large_n() {
        let mut rng = SeededStream::new(53, 0).rng();
        let s = random_stiefel(5, &mut rng);
        let p = ControlProblem::with_projector_target(crate::sampling::pure_state(5)).unwrap();
        assert!(matches!(
            critical_report(&s, &p),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn dim_max_values() {
        assert_eq!(dim_max_manifold(2, 1, 1).unwrap(), 20);
        assert_eq!(dim_max_manifold(10, 0, 1).unwrap(), 1900);
        // e1 = N means Theta is a multiple of the identity: the optimum
        // manifold is the whole Stiefel manifold.
        for n in 2..=6usize {
            for d0 in 0..n {
                assert_eq!(
                    dim_max_manifold(n, d0, n).unwrap(),
                    tangent_dimension(n) as u64
                );
            }
        }
        assert!(dim_max_manifold(3, 3, 1).is_err());
        assert!(dim_max_manifold(3, 0, 0).is_err());
    }

    #[test]
    fn dim_max_monotone_in_e1() {
        for n in 2..=8usize {
            for d0 in 0..n {
                let mut prev = 0;
                for e1 in 1..=n {
                    let d = dim_max_manifold(n, d0, e1).unwrap();
                    assert!(d >= prev, "dim not monotone at n={n} d0={d0} e1={e1}");
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn canonicalize_diagonal_inputs_are_fixed() {
        let rho = from_diagonal(&[0.6, 0.4, 0.0]);
        let theta = from_diagonal(&[0.0, 0.5, 1.0]);
        let c = canonicalize(&rho, &theta).unwrap();
        assert!((c.omega.clone() - identity(3)).norm() < 1e-12);
        assert!((c.theta_basis.clone() - identity(3)).norm() < 1e-12);
        assert_eq!(c.problem.rho(), &[0.6, 0.4, 0.0]);
        assert_eq!(c.problem.d0(), 1);
        assert_eq!(c.problem.e1(), 1);
    }

    #[test]
    fn canonicalize_recovers_rotated_spectrum() {
        let mut rng = SeededStream::new(54, 0).rng();
        let u = haar_unitary(2, &mut rng);
        let rho = &u * from_diagonal(&[1.0, 0.0]) * u.adjoint();
        let theta = from_diagonal(&[0.0, 1.0]);
        let c = canonicalize(&rho, &theta).unwrap();
        assert_relative_eq!(c.problem.rho()[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(c.problem.rho()[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn canonicalize_preserves_objective() {
        let mut rng = SeededStream::new(55, 0).rng();
        let n = 3;
        for _ in 0..10 {
            // Random Hermitian observable and random density matrix.
            let g = complex_gaussian(n, n, &mut rng);
            let theta_full = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
            let u = haar_unitary(n, &mut rng);
            let spectrum = random_rho(n, 1, ZeroPlacement::RandomPositions, &mut rng).unwrap();
            let rho_full = &u * from_diagonal(&spectrum) * u.adjoint();

            let c = canonicalize(&rho_full, &theta_full).unwrap();
            let s = random_stiefel(n, &mut rng);

            // Direct evaluation of Tr[Phi(rho) Theta] in the original frame.
            let phi_rho = s.apply_channel(&rho_full).unwrap();
            let j_orig = (phi_rho * &theta_full).trace().re;

            // Same channel re-expressed with the canonical problem:
            // K -> V^dag K V Omega.
            let rotation = &c.theta_basis * &c.omega;
            let mut blocks = Vec::new();
            for i in 0..s.num_blocks() {
                blocks.push(c.theta_basis.ad_mul(&(s.block(i) * &rotation)));
            }
            let s_tilde = StiefelPoint::from_blocks(&blocks).unwrap();
            let j_canon = objective(&s_tilde, &c.problem).unwrap();
            assert!(
                (j_orig - j_canon).abs() < 1e-10,
                "objective drifted: {j_orig} vs {j_canon}"
            );
        }
    }

    #[test]
    fn canonicalize_rejects_bad_rho() {
        let rho = from_diagonal(&[0.9, 0.3]); // trace 1.2
        let theta = from_diagonal(&[0.0, 1.0]);
        assert!(canonicalize(&rho, &theta).is_err());
    }

    #[test]
    fn control_problem_counts() {
        let p = problem(&[0.5, 0.5, 0.0], &[0.2, 1.0, 1.0]);
        assert_eq!(p.d0(), 1);
        assert_eq!(p.e1(), 2);
        assert_eq!(p.theta_max(), 1.0);
        assert_eq!(p.theta_min(), 0.2);
        assert_eq!(p.rho_max(), 0.5);
        assert!(ControlProblem::new(vec![0.5, 0.6], vec![0.0, 1.0]).is_err());
        assert!(ControlProblem::new(vec![1.2, -0.2], vec![0.0, 1.0]).is_err());
    }
}
