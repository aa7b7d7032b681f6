// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex matrix primitives: the real Hilbert-Schmidt inner product,
//! QR with phase normalization, and Hermitian eigendecomposition.
//!
//! Everything here is sized for the desk-scale regime (largest matrix is
//! N^3 x N with N <= 12), so dense double-precision storage is used
//! throughout with no sparse paths.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix, the workhorse type of the whole library.
pub type CMatrix = DMatrix<Complex64>;

/// Diagonal of `r` below this is treated as rank deficiency in QR.
pub const QR_RANK_TOL: f64 = 1e-12;

/// Relative Hermiticity tolerance accepted by [`hermitian_eig`].
pub const HERMITICITY_TOL: f64 = 1e-10;

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn from_diagonal(d: &[f64]) -> CMatrix {
    CMatrix::from_fn(d.len(), d.len(), |r, c| {
        if r == c {
            Complex64::new(d[r], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Checks that every entry is finite; constructors route through this so
/// NaN/Inf never enter the numerical core.
pub fn ensure_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Real Hilbert-Schmidt inner product `<A,B> = Re Tr[A^dag B]`.
///
/// This is the inner product used for gradients, tangent projections and
/// constraint functionals alike.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "hs_inner: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(hs_inner_unchecked(a, b))
}

#[inline]
pub(crate) fn hs_inner_unchecked(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// Frobenius norm, `sqrt(<A,A>)`.
#[inline]
pub fn frob_norm(a: &CMatrix) -> f64 {
    a.norm()
}

/// QR factorization with the phase ambiguity removed: `a = q r` with
/// `q^dag q = I` and `r` upper triangular with strictly positive real
/// diagonal. Fixing the phases makes the map deterministic and turns
/// QR of a complex Gaussian matrix into a sampler for the invariant
/// measure on the Stiefel manifold.
pub fn qr_phase_fixed(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::DimensionMismatch(format!(
            "qr_phase_fixed requires rows >= cols, got {rows}x{cols}"
        )));
    }
    ensure_finite(a, "qr_phase_fixed input")?;
    let (mut q, mut r) = a.clone().qr().unpack();
    for j in 0..cols {
        let d = r[(j, j)];
        let mag = d.norm();
        if mag < QR_RANK_TOL {
            return Err(Error::DegenerateInput(format!(
                "qr_phase_fixed: |r[{j},{j}]| = {mag:.3e} below rank tolerance"
            )));
        }
        // Column j of q absorbs the phase, row j of r sheds it.
        let phase = d / mag;
        let conj = phase.conj();
        for i in 0..rows {
            q[(i, j)] *= phase;
        }
        for k in j..cols {
            r[(j, k)] *= conj;
        }
        // Kill the residual imaginary dust on the diagonal.
        r[(j, j)] = Complex64::new(r[(j, j)].re, 0.0);
    }
    Ok((q, r))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    /// Real eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Matching orthonormal eigenvectors as columns.
    pub eigenvectors: CMatrix,
}

impl HermitianSpectrum {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }
}

/// Hermitian eigendecomposition. The input must be square and Hermitian
/// within `1e-10 * ||a||_F`; anything else is a contract violation.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianSpectrum> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "hermitian_eig: matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "hermitian_eig input")?;
    let defect = (a - a.adjoint()).norm();
    if defect > HERMITICITY_TOL * a.norm().max(1.0) {
        return Err(Error::ContractViolation(format!(
            "hermitian_eig: Hermiticity defect {defect:.3e} exceeds tolerance"
        )));
    }
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{complex_gaussian, SeededStream};
    use approx::assert_relative_eq;

    #[test]
    fn hs_inner_identity_is_trace() {
        let i2 = identity(2);
        assert_relative_eq!(hs_inner(&i2, &i2).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hs_inner_is_squared_frobenius_on_diagonal() {
        let mut rng = SeededStream::new(11, 0).rng();
        let a = complex_gaussian(5, 3, &mut rng);
        assert_relative_eq!(
            hs_inner(&a, &a).unwrap(),
            frob_norm(&a).powi(2),
            max_relative = 1e-12
        );
    }

    #[test]
    fn hs_inner_of_x_and_ix_vanishes() {
        // Re Tr[X^dag (iX)] = Re(i ||X||^2) = 0.
        let mut rng = SeededStream::new(12, 0).rng();
        for _ in 0..20 {
            let x = complex_gaussian(4, 4, &mut rng);
            let ix = x.map(|z| z * Complex64::new(0.0, 1.0));
            assert!(hs_inner(&x, &ix).unwrap().abs() < 1e-12 * frob_norm(&x).powi(2));
        }
    }

    #[test]
    fn hs_inner_rejects_shape_mismatch() {
        let a = identity(2);
        let b = identity(3);
        assert!(hs_inner(&a, &b).is_err());
    }

    #[test]
    fn hs_inner_real_bilinear_positive() {
        let mut rng = SeededStream::new(13, 0).rng();
        let a = complex_gaussian(3, 3, &mut rng);
        let b = complex_gaussian(3, 3, &mut rng);
        let c = complex_gaussian(3, 3, &mut rng);
        let two = Complex64::new(2.0, 0.0);
        let three = Complex64::new(3.0, 0.0);
        let lhs = hs_inner(&(&a * two + &b * three), &c).unwrap();
        let rhs = 2.0 * hs_inner(&a, &c).unwrap() + 3.0 * hs_inner(&b, &c).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        assert_relative_eq!(hs_inner(&a, &b).unwrap(), hs_inner(&b, &a).unwrap(), epsilon = 1e-12);
        assert!(hs_inner(&a, &a).unwrap() > 0.0);
    }

    #[test]
    fn qr_of_identity_is_identity() {
        let (q, r) = qr_phase_fixed(&identity(3)).unwrap();
        assert!((q - identity(3)).norm() < 1e-14);
        assert!((r - identity(3)).norm() < 1e-14);
    }

    #[test]
    fn qr_orthonormal_and_reconstructs() {
        let mut rng = SeededStream::new(14, 0).rng();
        let a = complex_gaussian(8, 2, &mut rng);
        let (q, r) = qr_phase_fixed(&a).unwrap();
        assert!((q.ad_mul(&q) - identity(2)).norm() < 1e-12);
        assert!((&q * &r - &a).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn qr_diagonal_real_positive_over_random_inputs() {
        let mut rng = SeededStream::new(15, 0).rng();
        for _ in 0..100 {
            let a = complex_gaussian(6, 3, &mut rng);
            let (_, r) = qr_phase_fixed(&a).unwrap();
            for j in 0..3 {
                assert!(r[(j, j)].re > 0.0);
                assert!(r[(j, j)].im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn qr_is_deterministic() {
        let mut rng = SeededStream::new(16, 0).rng();
        let a = complex_gaussian(7, 4, &mut rng);
        let (q1, r1) = qr_phase_fixed(&a).unwrap();
        let (q2, r2) = qr_phase_fixed(&a).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn qr_rejects_rank_deficiency() {
        let a = CMatrix::zeros(4, 2);
        assert!(matches!(qr_phase_fixed(&a), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn eig_diagonal() {
        let a = from_diagonal(&[0.3, 0.7]);
        let s = hermitian_eig(&a).unwrap();
        assert_relative_eq!(s.eigenvalues[0], 0.7, epsilon = 1e-14);
        assert_relative_eq!(s.eigenvalues[1], 0.3, epsilon = 1e-14);
    }

    #[test]
    fn eig_identity() {
        let s = hermitian_eig(&identity(5)).unwrap();
        for v in &s.eigenvalues {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_trace_identity_and_reconstruction() {
        let mut rng = SeededStream::new(17, 0).rng();
        for _ in 0..10 {
            let g = complex_gaussian(6, 6, &mut rng);
            let a = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
            let s = hermitian_eig(&a).unwrap();
            let trace: f64 = (0..6).map(|i| a[(i, i)].re).sum();
            let sum: f64 = s.eigenvalues.iter().sum();
            assert_relative_eq!(sum, trace, epsilon = 1e-10);
            // V Lambda V^dag reconstructs A.
            let lambda = from_diagonal(&s.eigenvalues);
            let rebuilt = &s.eigenvectors * lambda * s.eigenvectors.adjoint();
            assert!((rebuilt - &a).norm() <= 1e-10 * a.norm().max(1.0));
            assert!((s.eigenvectors.ad_mul(&s.eigenvectors) - identity(6)).norm() < 1e-10);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut rng = SeededStream::new(18, 0).rng();
        let a = complex_gaussian(4, 4, &mut rng);
        assert!(matches!(hermitian_eig(&a), Err(Error::ContractViolation(_))));
    }
}
