// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! W-invariant affine constraints on the Kraus blocks: anchor-matrix
//! assembly, the feasibility phase, the constrained tangent projector, and
//! the analytic optimum for element-fixing constraints.
//!
//! A constraint family is carried by anchor matrices G_k (N^3 x N); the
//! constraint functionals are h_k(S) = <G_k, S>. Two origins exist:
//!
//! * `general B`: Tr(B_i^dag K_j) = 0 for a list of N x N matrices B_i and
//!   every block j. Anchor l = n(j-1)+i places B_i in block row j; the
//!   second half of the anchors are the same matrices times the imaginary
//!   unit, covering real and imaginary parts.
//! * `element fixing`: (K_l)_{r,c} = 0 for every block l and every index
//!   pair (r, c) in I1 x I2, i.e. whole Y-vectors are pinned to zero.
//!
//! Anchors are stored structurally (one N x N payload plus a block row);
//! `anchor_matrix` materializes the full G_k on demand.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flow::{
    drive, DriverSettings, FlowConfig, HookOutcome, StopReason, Trajectory, FEASIBILITY_TOL,
};
use crate::landscape::{gradient_flat, objective_flat, ControlProblem};
use crate::matrix::{ensure_finite, hs_inner_unchecked, CMatrix};
use crate::stiefel::{retract, tangent_project_unchecked, StiefelPoint, TangentVector};

/// Constraint values above this trigger in-flow repair.
pub const CONSTRAINT_REPAIR_THRESHOLD: f64 = 1e-7;

/// Relative eigenvalue cutoff for the pseudo-inverse of the Gram matrix.
pub const GRAM_RANK_TOL: f64 = 1e-10;

/// How the constraint family was built.
#[derive(Debug, Clone)]
pub enum ConstraintOrigin {
    GeneralB { bs: Vec<CMatrix> },
    /// 1-based row indices (I1) and column indices (I2); the constrained
    /// entries are the product `I1 x I2` in every block.
    ElementFixing { rows: Vec<usize>, cols: Vec<usize> },
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    /// Block row the payload occupies (0-based).
    block: usize,
    /// Anchor is the imaginary-unit multiple of the payload.
    imag: bool,
    kind: AnchorKind,
}

#[derive(Debug, Clone, Copy)]
enum AnchorKind {
    /// Payload is `bs[idx]` of the general-B origin.
    Dense(usize),
    /// Payload is the elementary matrix at (row, col), 0-based.
    Elementary { row: usize, col: usize },
}

/// A family of q real-valued affine constraints on the Stiefel manifold.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    n: usize,
    origin: ConstraintOrigin,
    anchors: Vec<Anchor>,
    /// Constant part of the Gram matrix: `<G_k, G_l>`.
    const_gram: DMatrix<f64>,
    /// General-B count (0 otherwise).
    nb: usize,
    /// Cholesky factor of the per-block anchor Gram (general-B full-rank
    /// sets only); enables the Woodbury solve in the projector.
    c0_chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl ConstraintSet {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of real constraints.
    pub fn q(&self) -> usize {
        self.anchors.len()
    }

    pub fn origin(&self) -> &ConstraintOrigin {
        &self.origin
    }

    /// No constraints at all; the constrained projector degenerates to the
    /// identity on tangent vectors.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            origin: ConstraintOrigin::ElementFixing {
                rows: vec![],
                cols: vec![],
            },
            anchors: vec![],
            const_gram: DMatrix::zeros(0, 0),
            nb: 0,
            c0_chol: None,
        }
    }

    fn payload(&self, a: &Anchor) -> CMatrix {
        match a.kind {
            AnchorKind::Dense(i) => match &self.origin {
                ConstraintOrigin::GeneralB { bs } => bs[i].clone(),
                _ => unreachable!("dense anchor without general-B origin"),
            },
            AnchorKind::Elementary { row, col } => {
                let mut e = CMatrix::zeros(self.n, self.n);
                e[(row, col)] = Complex64::new(1.0, 0.0);
                e
            }
        }
    }

    /// Materializes anchor `k` as its full N^3 x N matrix.
    pub fn anchor_matrix(&self, k: usize) -> CMatrix {
        let a = &self.anchors[k];
        let mut g = CMatrix::zeros(self.n * self.n * self.n, self.n);
        let mut payload = self.payload(a);
        if a.imag {
            payload *= Complex64::new(0.0, 1.0);
        }
        g.view_mut((a.block * self.n, 0), (self.n, self.n))
            .copy_from(&payload);
        g
    }

    /// h_k(S) = <G_k, S> for the flat matrix `m`.
    fn h_of(&self, m: &CMatrix, a: &Anchor) -> f64 {
        let n = self.n;
        let block = m.view((a.block * n, 0), (n, n));
        let tr: Complex64 = match a.kind {
            AnchorKind::Dense(i) => {
                let b = match &self.origin {
                    ConstraintOrigin::GeneralB { bs } => &bs[i],
                    _ => unreachable!(),
                };
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        acc += b[(r, c)].conj() * block[(r, c)];
                    }
                }
                acc
            }
            AnchorKind::Elementary { row, col } => block[(row, col)],
        };
        // <i G~, S> = Im Tr[G~^dag S].
        if a.imag {
            tr.im
        } else {
            tr.re
        }
    }

    /// All q constraint values at `s`.
    pub fn h_values(&self, s: &StiefelPoint) -> Vec<f64> {
        self.h_values_flat(s.as_matrix())
    }

    pub(crate) fn h_values_flat(&self, m: &CMatrix) -> Vec<f64> {
        self.anchors.iter().map(|a| self.h_of(m, a)).collect()
    }

    /// Largest |h_k| at `m`.
    pub(crate) fn max_violation(&self, m: &CMatrix) -> f64 {
        self.anchors
            .iter()
            .map(|a| self.h_of(m, a).abs())
            .fold(0.0, f64::max)
    }

    /// `f(S) = sum_k h_k(S)^2`, the feasibility residual.
    pub fn residual(&self, m: &CMatrix) -> f64 {
        self.anchors
            .iter()
            .map(|a| {
                let h = self.h_of(m, a);
                h * h
            })
            .sum()
    }

    /// Ambient gradient of f: `sum_k 2 h_k G_k`, scattered blockwise.
    fn grad_f_ambient(&self, m: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n * n * n, n);
        for a in &self.anchors {
            let h = self.h_of(m, a);
            if h == 0.0 {
                continue;
            }
            let coef = if a.imag {
                Complex64::new(0.0, 2.0 * h)
            } else {
                Complex64::new(2.0 * h, 0.0)
            };
            let mut view = out.view_mut((a.block * n, 0), (n, n));
            match a.kind {
                AnchorKind::Dense(i) => {
                    let b = match &self.origin {
                        ConstraintOrigin::GeneralB { bs } => &bs[i],
                        _ => unreachable!(),
                    };
                    for r in 0..n {
                        for c in 0..n {
                            view[(r, c)] += coef * b[(r, c)];
                        }
                    }
                }
                AnchorKind::Elementary { row, col } => {
                    view[(row, col)] += coef;
                }
            }
        }
        out
    }

    /// `S^dag G_k` (N x N) for the flat matrix `m`.
    fn s_dag_g(&self, m: &CMatrix, a: &Anchor) -> CMatrix {
        let n = self.n;
        let block = m.view((a.block * n, 0), (n, n));
        let mut t = match a.kind {
            AnchorKind::Dense(i) => {
                let b = match &self.origin {
                    ConstraintOrigin::GeneralB { bs } => &bs[i],
                    _ => unreachable!(),
                };
                block.ad_mul(b)
            }
            AnchorKind::Elementary { row, col } => {
                // K^dag E_{rc}: column c holds the conjugated row r of K.
                let mut t = CMatrix::zeros(n, n);
                for j in 0..n {
                    t[(j, col)] = block[(row, j)].conj();
                }
                t
            }
        };
        if a.imag {
            t *= Complex64::new(0.0, 1.0);
        }
        t
    }

    /// For element-fixing sets: true when the constrained coordinates of `m`
    /// are all below `tol`.
    pub(crate) fn coords_below(&self, m: &CMatrix, tol: f64) -> bool {
        match &self.origin {
            ConstraintOrigin::ElementFixing { rows, cols } => {
                let n = self.n;
                for l in 0..n * n {
                    for &r in rows {
                        for &c in cols {
                            if m[(l * n + (r - 1), c - 1)].norm() > tol {
                                return false;
                            }
                        }
                    }
                }
                true
            }
            _ => false,
        }
    }

    /// Zeroes the constrained coordinates in place (element fixing only).
    pub(crate) fn pin_coords(&self, m: &mut CMatrix) {
        if let ConstraintOrigin::ElementFixing { rows, cols } = &self.origin {
            let n = self.n;
            for l in 0..n * n {
                for &r in rows {
                    for &c in cols {
                        m[(l * n + (r - 1), c - 1)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
    }
}

/// Builds the general-B constraint family `Tr(B_i^dag K_j) = 0`.
pub fn build_general(bs: Vec<CMatrix>) -> Result<ConstraintSet> {
    if bs.is_empty() {
        return Err(Error::ContractViolation(
            "build_general: need at least one B matrix".into(),
        ));
    }
    let n = bs[0].nrows();
    if n < 2 || bs.iter().any(|b| b.shape() != (n, n)) {
        return Err(Error::DimensionMismatch(
            "build_general: all B matrices must be square of equal size >= 2".into(),
        ));
    }
    let max_count = n * n - n - 1;
    if bs.len() > max_count {
        return Err(Error::ContractViolation(format!(
            "build_general: {} constraints exceed the N^2-N-1 = {max_count} bound",
            bs.len()
        )));
    }
    for (i, b) in bs.iter().enumerate() {
        ensure_finite(b, "build_general B matrix")?;
        if b.norm() == 0.0 {
            return Err(Error::ContractViolation(format!(
                "build_general: B_{} is the zero matrix",
                i + 1
            )));
        }
    }
    let nb = bs.len();
    let mut anchors = Vec::with_capacity(2 * nb * n * n);
    // l = n(j-1)+i ordering: i varies fastest within each block row j.
    for imag in [false, true] {
        for j in 0..n * n {
            for i in 0..nb {
                anchors.push(Anchor {
                    block: j,
                    imag,
                    kind: AnchorKind::Dense(i),
                });
            }
        }
    }
    // Constant Gram <G_k, G_l>: nonzero only for anchors in the same block.
    let mut b_gram = DMatrix::<Complex64>::zeros(nb, nb);
    for i in 0..nb {
        for k in 0..nb {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    acc += bs[i][(r, c)].conj() * bs[k][(r, c)];
                }
            }
            b_gram[(i, k)] = acc;
        }
    }
    let q = anchors.len();
    let mut const_gram = DMatrix::zeros(q, q);
    for (k, ak) in anchors.iter().enumerate() {
        for (l, al) in anchors.iter().enumerate() {
            if ak.block != al.block {
                continue;
            }
            let (AnchorKind::Dense(i), AnchorKind::Dense(j)) = (ak.kind, al.kind) else {
                unreachable!()
            };
            let g = b_gram[(i, j)];
            // Re[conj(u_k) u_l Tr(B_i^dag B_j)] for u in {1, i}.
            const_gram[(k, l)] = match (ak.imag, al.imag) {
                (false, false) | (true, true) => g.re,
                (false, true) => -g.im,
                (true, false) => g.im,
            };
        }
    }
    // Realified per-block anchor Gram; shared by every block row.
    let mut c0 = DMatrix::<f64>::zeros(2 * nb, 2 * nb);
    for i in 0..nb {
        for k in 0..nb {
            let g = b_gram[(i, k)];
            c0[(i, k)] = g.re;
            c0[(i, nb + k)] = -g.im;
            c0[(nb + i, k)] = g.im;
            c0[(nb + i, nb + k)] = g.re;
        }
    }
    let c0_chol = c0.cholesky().filter(|ch| {
        let diag: Vec<f64> = (0..2 * nb).map(|i| ch.l_dirty()[(i, i)]).collect();
        let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        dmin * dmin > 1e-10 * (dmax * dmax).max(1.0)
    });
    Ok(ConstraintSet {
        n,
        origin: ConstraintOrigin::GeneralB { bs },
        anchors,
        const_gram,
        nb,
        c0_chol,
    })
}

/// Builds the element-fixing family `(K_l)_{r,c} = 0` for every block l and
/// every `(r, c)` in `I1 x I2` (1-based index sets of equal cardinality).
pub fn build_element_fixing(n: usize, i1: &[usize], i2: &[usize]) -> Result<ConstraintSet> {
    if i1.is_empty() || i2.is_empty() {
        return Err(Error::ContractViolation(
            "build_element_fixing: index sets must be nonempty".into(),
        ));
    }
    if i1.len() != i2.len() {
        return Err(Error::ContractViolation(
            "build_element_fixing: I1 and I2 must have equal cardinality".into(),
        ));
    }
    let m = i1.len();
    for set in [i1, i2] {
        if set.iter().any(|&v| v < 1 || v > n) {
            return Err(Error::ContractViolation(format!(
                "build_element_fixing: indices must lie in 1..={n}"
            )));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m {
            return Err(Error::ContractViolation(
                "build_element_fixing: repeated index in a set".into(),
            ));
        }
    }
    // m^2 constrained entries per block; the element-fixing count bound.
    if m * m > n * n - n - 1 {
        return Err(Error::ContractViolation(format!(
            "build_element_fixing: {} fixed entries exceed the N^2-N-1 = {} bound",
            m * m,
            n * n - n - 1
        )));
    }
    let mut rows = i1.to_vec();
    let mut cols = i2.to_vec();
    rows.sort_unstable();
    cols.sort_unstable();
    let mut anchors = Vec::with_capacity(2 * n * n * m * m);
    for &r in &rows {
        for &c in &cols {
            for imag in [false, true] {
                for l in 0..n * n {
                    anchors.push(Anchor {
                        block: l,
                        imag,
                        kind: AnchorKind::Elementary {
                            row: r - 1,
                            col: c - 1,
                        },
                    });
                }
            }
        }
    }
    // Elementary anchors are orthonormal.
    let const_gram = DMatrix::identity(anchors.len(), anchors.len());
    Ok(ConstraintSet {
        n,
        origin: ConstraintOrigin::ElementFixing { rows, cols },
        anchors,
        const_gram,
        nb: 0,
        c0_chol: None,
    })
}

/// Analytic constrained optimum for element fixing against the projector
/// observable: 1 when the target row N is unconstrained, else the mass of
/// rho outside the constrained columns.
pub fn analytic_jmax_element_fixing(
    p: &ControlProblem,
    i1: &[usize],
    i2: &[usize],
) -> Result<f64> {
    let n = p.n();
    let projector = p.theta().iter().enumerate().all(|(i, &t)| {
        if i == n - 1 {
            (t - 1.0).abs() < 1e-12
        } else {
            t.abs() < 1e-12
        }
    });
    if !projector {
        return Err(Error::Capability(
            "analytic_jmax_element_fixing requires Theta = |N><N|".into(),
        ));
    }
    if !i1.contains(&n) {
        return Ok(1.0);
    }
    let blocked: f64 = i2.iter().map(|&c| p.rho()[c - 1]).sum();
    Ok(1.0 - blocked)
}

// ---------------------------------------------------------------------------
// Constrained tangent projector.
// ---------------------------------------------------------------------------

/// Dense rank-revealing fallback: pseudo-inverse of the Gram matrix on its
/// numerical range.
pub(crate) struct EigenPinv {
    vectors: DMatrix<f64>,
    inv_values: Vec<f64>,
    rank: usize,
}

impl EigenPinv {
    fn new(z: DMatrix<f64>) -> Self {
        let q = z.nrows();
        let eig = z.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let cut = GRAM_RANK_TOL * lmax.max(1.0);
        let mut inv_values = vec![0.0; q];
        let mut rank = 0;
        for i in 0..q {
            if eig.eigenvalues[i] > cut {
                inv_values[i] = 1.0 / eig.eigenvalues[i];
                rank += 1;
            }
        }
        EigenPinv {
            vectors: eig.eigenvectors,
            inv_values,
            rank,
        }
    }

    fn solve(&self, g: &[f64]) -> Vec<f64> {
        let q = g.len();
        let mut coeff = vec![0.0; q];
        for j in 0..q {
            if self.inv_values[j] == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for i in 0..q {
                dot += self.vectors[(i, j)] * g[i];
            }
            coeff[j] = dot * self.inv_values[j];
        }
        let mut y = vec![0.0; q];
        for (j, &cj) in coeff.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            for i in 0..q {
                y[i] += self.vectors[(i, j)] * cj;
            }
        }
        y
    }
}

/// Applies the inverse of the constant anchor Gram blockwise: anchors couple
/// only within a block row, identically for every row.
fn c_inv_apply(
    cs: &ConstraintSet,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    g: &[f64],
) -> Vec<f64> {
    let nb = cs.nb;
    let n2 = cs.n * cs.n;
    let half = nb * n2;
    let mut out = vec![0.0; g.len()];
    let mut block = nalgebra::DVector::<f64>::zeros(2 * nb);
    for j in 0..n2 {
        for i in 0..nb {
            block[i] = g[j * nb + i];
            block[nb + i] = g[half + j * nb + i];
        }
        chol.solve_mut(&mut block);
        for i in 0..nb {
            out[j * nb + i] = block[i];
            out[half + j * nb + i] = block[nb + i];
        }
    }
    out
}

/// Subtracts `sum_k y_k G_k` from `target` and returns `sum_k y_k T_k`.
fn subtract_scatter(
    cs: &ConstraintSet,
    t: &[CMatrix],
    y: &[f64],
    target: &mut CMatrix,
) -> CMatrix {
    let n = cs.n;
    let mut t_sum = CMatrix::zeros(n, n);
    for (k, a) in cs.anchors.iter().enumerate() {
        if y[k] == 0.0 {
            continue;
        }
        t_sum.zip_apply(&t[k], |acc, tk| *acc += tk * y[k]);
        let coef = if a.imag {
            Complex64::new(0.0, y[k])
        } else {
            Complex64::new(y[k], 0.0)
        };
        let mut view = target.view_mut((a.block * n, 0), (n, n));
        match a.kind {
            AnchorKind::Dense(i) => {
                let b = match &cs.origin {
                    ConstraintOrigin::GeneralB { bs } => &bs[i],
                    _ => unreachable!(),
                };
                for r in 0..n {
                    for c in 0..n {
                        view[(r, c)] -= coef * b[(r, c)];
                    }
                }
            }
            AnchorKind::Elementary { row, col } => {
                view[(row, col)] -= coef;
            }
        }
    }
    t_sum
}

/// Per-point factorization of the constrained projector.
pub(crate) enum ProjectorContext<'a> {
    Empty,
    /// General-B at full rank. The Gram matrix is `Z = C - F F^T`: C is the
    /// constant block-diagonal anchor Gram and the correction is the Gram of
    /// `sym(S^dag G_k)`, vectors in the N^2-dimensional real space of
    /// Hermitian matrices, so the update has rank at most N^2 and Woodbury
    /// solves Z exactly at a fraction of the dense cost.
    Woodbury {
        cs: &'a ConstraintSet,
        t: Vec<CMatrix>,
        f: DMatrix<f64>,
        cf: DMatrix<f64>,
        cap: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    /// Rank-revealing dense fallback for degenerate or near-singular Grams.
    DenseEigen {
        cs: &'a ConstraintSet,
        t: Vec<CMatrix>,
        solver: EigenPinv,
    },
    /// Element-fixing at a feasible point: the Gram matrix decouples over
    /// the constrained columns into one shared complex Hermitian block
    /// `H = I - W/2` with `W = R R^dag`, `R` the stack of constrained rows.
    Elementary {
        cs: &'a ConstraintSet,
        rows: Vec<usize>,
        cols: Vec<usize>,
        r_mat: CMatrix,
        /// Eigendecomposition of H with pseudo-inverted spectrum.
        vectors: CMatrix,
        inv_values: Vec<f64>,
        rank_per_col: usize,
    },
}

impl<'a> ProjectorContext<'a> {
    pub(crate) fn new(cs: &'a ConstraintSet, m: &CMatrix) -> Result<Self> {
        if cs.q() == 0 {
            return Ok(ProjectorContext::Empty);
        }
        if m.ncols() != cs.n || m.nrows() != cs.n.pow(3) {
            return Err(Error::DimensionMismatch(format!(
                "constraint set is for N = {}, point is {}x{}",
                cs.n,
                m.nrows(),
                m.ncols()
            )));
        }
        if let ConstraintOrigin::ElementFixing { rows, cols } = &cs.origin {
            if cs.coords_below(m, 1e-10) {
                return Self::elementary(cs, m, rows.clone(), cols.clone());
            }
        }
        // General path: T_k = S^dag G_k, Z_kl = <G_k,G_l> - <sym T_k, sym T_l>.
        let q = cs.q();
        let t: Vec<CMatrix> = cs.anchors.iter().map(|a| cs.s_dag_g(m, a)).collect();
        if let Some(c0) = &cs.c0_chol {
            let n = cs.n;
            let r = n * n;
            // Coordinates of sym(T_k) in an orthonormal real basis of the
            // Hermitian matrices.
            let sqrt2 = std::f64::consts::SQRT_2;
            let mut f = DMatrix::<f64>::zeros(q, r);
            for (k, tk) in t.iter().enumerate() {
                let sym = (tk + tk.adjoint()) * Complex64::new(0.5, 0.0);
                let mut idx = 0;
                for a in 0..n {
                    f[(k, idx)] = sym[(a, a)].re;
                    idx += 1;
                }
                for a in 0..n {
                    for b in a + 1..n {
                        f[(k, idx)] = sqrt2 * sym[(a, b)].re;
                        idx += 1;
                        f[(k, idx)] = sqrt2 * sym[(a, b)].im;
                        idx += 1;
                    }
                }
            }
            let mut cf = DMatrix::<f64>::zeros(q, r);
            let mut col = vec![0.0; q];
            for j in 0..r {
                for i in 0..q {
                    col[i] = f[(i, j)];
                }
                let solved = c_inv_apply(cs, c0, &col);
                for i in 0..q {
                    cf[(i, j)] = solved[i];
                }
            }
            let cap_m = DMatrix::identity(r, r) - f.transpose() * &cf;
            if let Some(cap) = cap_m.cholesky() {
                let diag: Vec<f64> = (0..r).map(|i| cap.l_dirty()[(i, i)]).collect();
                let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
                let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
                if dmin * dmin > 1e-8 * (dmax * dmax).max(1.0) {
                    return Ok(ProjectorContext::Woodbury { cs, t, f, cf, cap });
                }
            }
        }
        let syms: Vec<CMatrix> = t
            .iter()
            .map(|tk| (tk + tk.adjoint()) * Complex64::new(0.5, 0.0))
            .collect();
        let mut z = cs.const_gram.clone();
        for k in 0..q {
            for l in 0..q {
                z[(k, l)] -= hs_inner_unchecked(&syms[k], &syms[l]);
            }
        }
        let solver = EigenPinv::new(z);
        Ok(ProjectorContext::DenseEigen { cs, t, solver })
    }

    /// Solves `Z y = g` with pseudo-inverse semantics on the numerical range.
    fn solve_y(&self, g: &[f64]) -> Vec<f64> {
        match self {
            ProjectorContext::Woodbury { cs, f, cf, cap, .. } => {
                let c0 = cs.c0_chol.as_ref().expect("Woodbury without anchor Gram");
                let u = c_inv_apply(cs, c0, g);
                let r = f.ncols();
                let mut rhs = nalgebra::DVector::<f64>::zeros(r);
                for j in 0..r {
                    let mut dot = 0.0;
                    for i in 0..g.len() {
                        dot += f[(i, j)] * u[i];
                    }
                    rhs[j] = dot;
                }
                cap.solve_mut(&mut rhs);
                let mut y = u;
                for (i, yi) in y.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..r {
                        acc += cf[(i, j)] * rhs[j];
                    }
                    *yi += acc;
                }
                y
            }
            ProjectorContext::DenseEigen { solver, .. } => solver.solve(g),
            _ => unreachable!("solve_y on structural variants"),
        }
    }

    fn elementary(
        cs: &'a ConstraintSet,
        m: &CMatrix,
        rows: Vec<usize>,
        cols: Vec<usize>,
    ) -> Result<Self> {
        let n = cs.n;
        let nr = rows.len();
        let dim = n * n * nr;
        // R stacks the constrained rows of every block: entry ((l, r), j).
        let mut r_mat = CMatrix::zeros(dim, n);
        for l in 0..n * n {
            for (ri, &r) in rows.iter().enumerate() {
                for j in 0..n {
                    r_mat[(l * nr + ri, j)] = m[(l * n + (r - 1), j)];
                }
            }
        }
        let w = &r_mat * r_mat.adjoint();
        let mut h = -w * Complex64::new(0.5, 0.0);
        for i in 0..dim {
            h[(i, i)] += Complex64::new(1.0, 0.0);
        }
        let spec = crate::matrix::hermitian_eig(&h)?;
        let lmax = spec.eigenvalues[0].max(0.0);
        let cut = GRAM_RANK_TOL * lmax.max(1.0);
        let mut inv_values = vec![0.0; dim];
        let mut rank_per_col = 0;
        for (i, &l) in spec.eigenvalues.iter().enumerate() {
            if l > cut {
                inv_values[i] = 1.0 / l;
                rank_per_col += 1;
            }
        }
        Ok(ProjectorContext::Elementary {
            cs,
            rows,
            cols,
            r_mat,
            vectors: spec.eigenvectors,
            inv_values,
            rank_per_col,
        })
    }

    /// Numerical rank of the active constraint differentials.
    pub(crate) fn rank(&self) -> usize {
        match self {
            ProjectorContext::Empty => 0,
            ProjectorContext::Woodbury { cs, .. } => cs.q(),
            ProjectorContext::DenseEigen { solver, .. } => solver.rank,
            ProjectorContext::Elementary {
                cols, rank_per_col, ..
            } => cols.len() * rank_per_col,
        }
    }

    /// Applies the projector onto the constraint-annihilating tangent
    /// subspace: `v - sum_{ij} P_S(G_i) (Z^+)_{ij} <G_j, v>`.
    pub(crate) fn apply(&self, m: &CMatrix, v: &CMatrix) -> CMatrix {
        match self {
            ProjectorContext::Empty => v.clone(),
            ProjectorContext::Woodbury { cs, t, .. }
            | ProjectorContext::DenseEigen { cs, t, .. } => {
                let g: Vec<f64> = cs.anchors.iter().map(|a| cs.h_of(v, a)).collect();
                let y = self.solve_y(&g);
                // Correction = sum_k y_k G_k - S sym(sum_k y_k T_k).
                let mut out = v.clone();
                let t_sum = subtract_scatter(cs, t, &y, &mut out);
                let sym = (&t_sum + t_sum.adjoint()) * Complex64::new(0.5, 0.0);
                out.gemm(Complex64::new(1.0, 0.0), m, &sym, Complex64::new(1.0, 0.0));
                out
            }
            ProjectorContext::Elementary {
                cs,
                rows,
                cols,
                r_mat,
                vectors,
                inv_values,
                ..
            } => {
                let n = cs.n;
                let nr = rows.len();
                let dim = n * n * nr;
                let mut out = v.clone();
                let mut t_sum = CMatrix::zeros(n, n);
                for &c in cols {
                    // Complex residual vector: the constrained coordinates
                    // of v in column c.
                    let mut gvec = CMatrix::zeros(dim, 1);
                    for l in 0..n * n {
                        for (ri, &r) in rows.iter().enumerate() {
                            gvec[(l * nr + ri, 0)] = v[(l * n + (r - 1), c - 1)];
                        }
                    }
                    // y = H^+ g via the shared eigenbasis.
                    let coeffs = vectors.ad_mul(&gvec);
                    let mut y = CMatrix::zeros(dim, 1);
                    for (j, &w) in inv_values.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let scale = Complex64::new(w, 0.0) * coeffs[(j, 0)];
                        for i in 0..dim {
                            y[(i, 0)] += vectors[(i, j)] * scale;
                        }
                    }
                    // Scatter part: subtract y at the constrained coords.
                    for l in 0..n * n {
                        for (ri, &r) in rows.iter().enumerate() {
                            out[(l * n + (r - 1), c - 1)] -= y[(l * nr + ri, 0)];
                        }
                    }
                    // T-sum contribution: column c gains R^dag y.
                    let rd_y = r_mat.ad_mul(&y);
                    for j in 0..n {
                        t_sum[(j, c - 1)] += rd_y[(j, 0)];
                    }
                }
                let sym = (&t_sum + t_sum.adjoint()) * Complex64::new(0.5, 0.0);
                out.gemm(Complex64::new(1.0, 0.0), m, &sym, Complex64::new(1.0, 0.0));
                out
            }
        }
    }
}

/// Projects a tangent vector onto the subspace annihilating all active
/// constraint differentials. Rank deficiency of the Gram matrix is handled
/// by a pseudo-inverse on its numerical range.
pub fn constrained_project(
    s: &StiefelPoint,
    cs: &ConstraintSet,
    v: &TangentVector,
) -> Result<TangentVector> {
    Ok(constrained_project_with_rank(s, cs, v)?.0)
}

/// As [`constrained_project`], additionally reporting the numerical rank of
/// the active constraint Gram matrix.
pub fn constrained_project_with_rank(
    s: &StiefelPoint,
    cs: &ConstraintSet,
    v: &TangentVector,
) -> Result<(TangentVector, usize)> {
    if v.n() != s.n() {
        return Err(Error::DimensionMismatch(
            "constrained_project: tangent and point dimensions differ".into(),
        ));
    }
    let ctx = ProjectorContext::new(cs, s.as_matrix())?;
    let out = ctx.apply(s.as_matrix(), v.as_matrix());
    Ok((
        TangentVector::from_flat_unchecked(s.n(), out),
        ctx.rank(),
    ))
}

// ---------------------------------------------------------------------------
// Feasibility phase and constrained flow.
// ---------------------------------------------------------------------------

/// Outcome of the feasibility phase.
#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub point: StiefelPoint,
    /// Final value of `f(S) = sum_k h_k^2`.
    pub residual: f64,
    /// Accepted descent steps taken.
    pub iterations: u64,
}

pub(crate) fn feasibility_flow(
    s0: &StiefelPoint,
    cfg: &FlowConfig,
    cs: &ConstraintSet,
) -> Result<Trajectory> {
    let n = s0.n();
    if cs.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "feasibility: constraint set N = {}, point N = {n}",
            cs.n()
        )));
    }
    let settings = DriverSettings {
        cfg,
        descent: true,
        value_stop: Some((FEASIBILITY_TOL, StopReason::FeasibilityReached)),
    };
    drive(
        &settings,
        n,
        s0.as_matrix(),
        &mut |m| Ok(-tangent_project_unchecked(n, m, &cs.grad_f_ambient(m)).flatten()),
        &mut |m| cs.residual(m),
        None,
    )
}

/// Descends `f(S) = sum_k <G_k,S>^2` from `s0` until the constraint family
/// is satisfied. Stalling above the threshold is reported as a feasibility
/// failure, never retried silently.
pub fn feasibility_descent(
    s0: &StiefelPoint,
    cs: &ConstraintSet,
    cfg: &FlowConfig,
) -> Result<FeasibilityResult> {
    let t = feasibility_flow(s0, cfg, cs)?;
    if t.stop_reason != StopReason::FeasibilityReached {
        return Err(Error::FeasibilityFailure(format!(
            "feasibility descent stalled at f = {:.3e} after {} steps",
            t.j_final(),
            t.tau
        )));
    }
    // Affine polish: the descent lands at f < 1e-10, the exact correction
    // takes the remaining violation down to roundoff.
    let mut m = t.final_point.flatten();
    repair_flat(&mut m, cs, 1e-12)?;
    let residual = cs.residual(&m);
    Ok(FeasibilityResult {
        residual,
        iterations: t.tau,
        point: StiefelPoint::from_flat_unchecked(s0.n(), m),
    })
}

/// Moves a near-feasible point exactly onto the constraint set (affine
/// correction in the tangent space, then retraction), iterating a few times.
pub fn project_to_constraints(s: &StiefelPoint, cs: &ConstraintSet) -> Result<StiefelPoint> {
    let mut m = s.flatten();
    repair_flat(&mut m, cs, 1e-12)?;
    Ok(StiefelPoint::from_flat_unchecked(s.n(), m))
}

/// In-place constraint repair on a flat state. Element-fixing coordinates
/// are pinned directly; general constraints get the exact affine correction
/// `S <- S - sum_k y_k P_S(G_k)` with `Z y = h`.
fn repair_flat(m: &mut CMatrix, cs: &ConstraintSet, tol: f64) -> Result<bool> {
    if matches!(cs.origin, ConstraintOrigin::ElementFixing { .. }) {
        if cs.max_violation(m) <= tol {
            return Ok(false);
        }
        // Alternate pinning with retraction until the retraction no longer
        // reintroduces coordinate mass, and end on a pin so the constrained
        // coordinates are exactly zero (the structured projector fast path
        // requires that).
        let n = cs.n();
        for _ in 0..8 {
            cs.pin_coords(m);
            let drift = (m.ad_mul(&*m) - CMatrix::identity(n, n)).norm();
            if drift <= 1e-12 {
                break;
            }
            let repaired = retract(m)?;
            *m = repaired.flatten();
        }
        cs.pin_coords(m);
        return Ok(true);
    }
    let mut touched = false;
    for _ in 0..4 {
        if cs.max_violation(m) <= tol {
            break;
        }
        touched = true;
        match &cs.origin {
            ConstraintOrigin::ElementFixing { .. } => unreachable!(),
            ConstraintOrigin::GeneralB { .. } => {
                let ctx = ProjectorContext::new(cs, m)?;
                let h = cs.h_values_flat(m);
                let y = ctx.solve_y(&h);
                let t = match &ctx {
                    ProjectorContext::Woodbury { t, .. }
                    | ProjectorContext::DenseEigen { t, .. } => t,
                    _ => unreachable!(),
                };
                let t_sum = subtract_scatter(cs, t, &y, m);
                let sym = (&t_sum + t_sum.adjoint()) * Complex64::new(0.5, 0.0);
                let m_copy = m.clone();
                m.gemm(
                    Complex64::new(1.0, 0.0),
                    &m_copy,
                    &sym,
                    Complex64::new(1.0, 0.0),
                );
            }
        }
        // The correction leaves the manifold by O(||correction||^2).
        let drift = {
            let n = cs.n();
            (m.ad_mul(&*m) - CMatrix::identity(n, n)).norm()
        };
        if drift > 1e-12 {
            let repaired = retract(m)?;
            *m = repaired.flatten();
        }
    }
    Ok(touched)
}

pub(crate) fn constrained_ascent(
    s0: &StiefelPoint,
    p: &ControlProblem,
    cfg: &FlowConfig,
    cs: &ConstraintSet,
) -> Result<Trajectory> {
    let n = s0.n();
    if cs.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "constrained flow: constraint set N = {}, point N = {n}",
            cs.n()
        )));
    }
    let target = cfg.target_value.unwrap_or_else(|| p.theta_max());
    let settings = DriverSettings {
        cfg,
        descent: false,
        value_stop: Some((target - cfg.stop_eps, StopReason::TargetReached)),
    };
    let mut field = |m: &CMatrix| -> Result<CMatrix> {
        let ctx = ProjectorContext::new(cs, m)?;
        Ok(ctx.apply(m, &gradient_flat(m, p)))
    };
    let mut repair = |m: &CMatrix| -> Result<HookOutcome> {
        match &cs.origin {
            ConstraintOrigin::ElementFixing { .. } => {
                // Retraction mixes a little mass back into the constrained
                // coordinates every step; keep them at exact zero so the
                // structured projector stays engaged. Below the repair
                // threshold a bare pin suffices: the orthonormality
                // perturbation is second-order and the next retraction
                // absorbs it.
                if cs.coords_below(m, 1e-11) {
                    return Ok(HookOutcome::Unchanged);
                }
                let mut fixed = m.clone();
                if cs.max_violation(m) <= CONSTRAINT_REPAIR_THRESHOLD {
                    cs.pin_coords(&mut fixed);
                } else {
                    repair_flat(&mut fixed, cs, 1e-10)?;
                }
                Ok(HookOutcome::Replaced(fixed))
            }
            ConstraintOrigin::GeneralB { .. } => {
                if cs.max_violation(m) <= CONSTRAINT_REPAIR_THRESHOLD {
                    return Ok(HookOutcome::Unchanged);
                }
                let mut fixed = m.clone();
                repair_flat(&mut fixed, cs, 1e-10)?;
                Ok(HookOutcome::Replaced(fixed))
            }
        }
    };
    drive(
        &settings,
        n,
        s0.as_matrix(),
        &mut field,
        &mut |m| objective_flat(m, p),
        Some(&mut repair),
    )
}

// ---------------------------------------------------------------------------
// Text serialization.
// ---------------------------------------------------------------------------

/// Writes a constraint set in the line-oriented text format:
///
/// ```text
/// # optional comments
/// n 3
/// b <2N^2 floats: row-major re im pairs>   (general-B origin)
/// fix <row> <col>                          (element-fixing origin, 1-based)
/// ```
pub fn write_constraints(cs: &ConstraintSet) -> String {
    let mut out = String::new();
    out.push_str(&format!("n {}\n", cs.n()));
    match &cs.origin {
        ConstraintOrigin::GeneralB { bs } => {
            for b in bs {
                out.push('b');
                for r in 0..cs.n() {
                    for c in 0..cs.n() {
                        out.push_str(&format!(" {} {}", b[(r, c)].re, b[(r, c)].im));
                    }
                }
                out.push('\n');
            }
        }
        ConstraintOrigin::ElementFixing { rows, cols } => {
            for (&r, &c) in rows.iter().zip(cols.iter()) {
                out.push_str(&format!("fix {r} {c}\n"));
            }
        }
    }
    out
}

/// Parses the format emitted by [`write_constraints`].
pub fn parse_constraints(text: &str) -> Result<ConstraintSet> {
    let mut n: Option<usize> = None;
    let mut bs: Vec<CMatrix> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut cols: Vec<usize> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("n") => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing N", lineno + 1)))?;
                n = Some(v.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad dimension '{v}'", lineno + 1))
                })?);
            }
            Some("b") => {
                let n = n.ok_or_else(|| {
                    Error::Parse(format!("line {}: 'b' before 'n'", lineno + 1))
                })?;
                let vals: Vec<f64> = it
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            Error::Parse(format!("line {}: bad float '{t}'", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != 2 * n * n {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} values, got {}",
                        lineno + 1,
                        2 * n * n,
                        vals.len()
                    )));
                }
                let b = CMatrix::from_fn(n, n, |r, c| {
                    let k = 2 * (r * n + c);
                    Complex64::new(vals[k], vals[k + 1])
                });
                bs.push(b);
            }
            Some("fix") => {
                let r: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: bad fix row", lineno + 1)))?;
                let c: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: bad fix col", lineno + 1)))?;
                rows.push(r);
                cols.push(c);
            }
            Some(other) => {
                return Err(Error::Parse(format!(
                    "line {}: unknown directive '{other}'",
                    lineno + 1
                )));
            }
            None => unreachable!(),
        }
    }
    let n = n.ok_or_else(|| Error::Parse("missing 'n <N>' line".into()))?;
    match (bs.is_empty(), rows.is_empty()) {
        (false, true) => build_general(bs),
        (true, false) => build_element_fixing(n, &rows, &cols),
        (true, true) => Err(Error::Parse("no constraints given".into())),
        (false, false) => Err(Error::Parse(
            "cannot mix 'b' and 'fix' lines in one constraint set".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_ascent, VectorField};
    use crate::matrix::hs_inner;
    use crate::sampling::{complex_gaussian, haar_unitary, SeededStream};
    use crate::stiefel::{apply_w, random_stiefel, tangent_project, WTransform};

    fn unit_b<Rn: rand::Rng>(n: usize, rng: &mut Rn) -> CMatrix {
        let g = complex_gaussian(n, n, rng);
        let norm = g.norm();
        g / Complex64::new(norm, 0.0)
    }

    #[test]
    fn general_anchor_count_and_structure() {
        let mut rng = SeededStream::new(71, 0).rng();
        let cs = build_general(vec![unit_b(2, &mut rng)]).unwrap();
        assert_eq!(cs.q(), 8); // 2 * 1 * N^2
        for k in 0..cs.q() {
            let g = cs.anchor_matrix(k);
            // Exactly one nonzero 2x2 block.
            let mut nonzero_blocks = 0;
            for j in 0..4 {
                if g.view((j * 2, 0), (2, 2)).norm() > 0.0 {
                    nonzero_blocks += 1;
                }
            }
            assert_eq!(nonzero_blocks, 1);
        }
    }

    #[test]
    fn general_rejects_out_of_range() {
        let mut rng = SeededStream::new(72, 0).rng();
        let too_many: Vec<CMatrix> = (0..2).map(|_| unit_b(2, &mut rng)).collect();
        assert!(build_general(too_many).is_err()); // N=2 allows at most 1
        assert!(build_general(vec![CMatrix::zeros(2, 2)]).is_err());
        assert!(build_general(vec![]).is_err());
    }

    #[test]
    fn element_fixing_anchor_count_and_bounds() {
        let cs = build_element_fixing(2, &[1], &[1]).unwrap();
        assert_eq!(cs.q(), 8); // 2 N^2 per fixed pair
        assert!(build_element_fixing(2, &[1, 2], &[1, 2]).is_err()); // 4 > 1
        assert!(build_element_fixing(3, &[1, 1], &[1, 2]).is_err()); // repeat
        assert!(build_element_fixing(3, &[1], &[1, 2]).is_err()); // unequal
        assert!(build_element_fixing(3, &[4], &[1]).is_err()); // range
    }

    #[test]
    fn h_values_match_materialized_anchors() {
        let mut rng = SeededStream::new(73, 0).rng();
        let s = random_stiefel(3, &mut rng);
        for cs in [
            build_general(vec![unit_b(3, &mut rng), unit_b(3, &mut rng)]).unwrap(),
            build_element_fixing(3, &[2], &[1]).unwrap(),
        ] {
            let h = cs.h_values(&s);
            for k in 0..cs.q() {
                let expect = hs_inner(&cs.anchor_matrix(k), s.as_matrix()).unwrap();
                assert!((h[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matrix_is_psd() {
        let mut rng = SeededStream::new(74, 0).rng();
        let s = random_stiefel(3, &mut rng);
        let cs = build_general(vec![unit_b(3, &mut rng), unit_b(3, &mut rng)]).unwrap();
        let q = cs.q();
        let mut z = DMatrix::<f64>::zeros(q, q);
        for k in 0..q {
            let pk = tangent_project(&s, &cs.anchor_matrix(k)).unwrap();
            for l in 0..q {
                z[(k, l)] = hs_inner(&cs.anchor_matrix(l), pk.as_matrix()).unwrap();
            }
        }
        let min = z
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10);
    }

    #[test]
    fn projector_empty_set_is_identity() {
        let mut rng = SeededStream::new(75, 0).rng();
        let s = random_stiefel(2, &mut rng);
        let v = tangent_project(&s, &complex_gaussian(8, 2, &mut rng)).unwrap();
        let cs = ConstraintSet::empty(2);
        let out = constrained_project(&s, &cs, &v).unwrap();
        assert!((out.as_matrix() - v.as_matrix()).norm() < 1e-15);
    }

    #[test]
    fn projector_idempotent_tangent_and_annihilating() {
        let mut rng = SeededStream::new(76, 0).rng();
        for n in [2usize, 3] {
            let s = random_stiefel(n, &mut rng);
            let sets = vec![
                build_general(vec![unit_b(n, &mut rng)]).unwrap(),
                build_element_fixing(n, &[1], &[n.min(2)]).unwrap(),
            ];
            for cs in sets {
                let v =
                    tangent_project(&s, &complex_gaussian(n * n * n, n, &mut rng)).unwrap();
                let (p1, rank) = constrained_project_with_rank(&s, &cs, &v).unwrap();
                assert!(rank > 0);
                let p2 = constrained_project(&s, &cs, &p1).unwrap();
                assert!(
                    (p1.as_matrix() - p2.as_matrix()).norm() <= 1e-9 * p1.norm().max(1.0)
                );
                assert!(p1.is_tangent_at(&s));
                for k in 0..cs.q() {
                    let g = hs_inner(&cs.anchor_matrix(k), p1.as_matrix()).unwrap();
                    assert!(g.abs() <= 1e-9, "constraint {k} not annihilated: {g:.3e}");
                }
            }
        }
    }

    #[test]
    fn elementary_fast_path_matches_generic() {
        let mut rng = SeededStream::new(77, 0).rng();
        let n = 3;
        let cs = build_element_fixing(n, &[3], &[1]).unwrap();
        let s0 = random_stiefel(n, &mut rng);
        let feasible = feasibility_descent(&s0, &cs, &FlowConfig::default()).unwrap();
        let s = project_to_constraints(&feasible.point, &cs).unwrap();
        // An infinitesimally perturbed copy forces the generic path.
        let mut m_generic = s.flatten();
        m_generic[(2, 0)] += Complex64::new(3e-9, 0.0);

        let v = tangent_project(&s, &complex_gaussian(n * n * n, n, &mut rng)).unwrap();
        let fast = ProjectorContext::new(&cs, s.as_matrix()).unwrap();
        assert!(matches!(fast, ProjectorContext::Elementary { .. }));
        let generic = ProjectorContext::new(&cs, &m_generic).unwrap();
        assert!(matches!(generic, ProjectorContext::DenseEigen { .. }));
        let a = fast.apply(s.as_matrix(), v.as_matrix());
        let b = generic.apply(&m_generic, v.as_matrix());
        assert!((&a - &b).norm() < 1e-6 * a.norm().max(1.0));
        // Fast path zeroes the constrained coordinates outright.
        for l in 0..n * n {
            assert!(a[(l * n + 2, 0)].norm() < 1e-12);
        }
    }

    #[test]
    fn woodbury_matches_dense_eigen_solve() {
        let mut rng = SeededStream::new(84, 0).rng();
        let n = 4;
        let bs: Vec<CMatrix> = (0..7).map(|_| unit_b(n, &mut rng)).collect();
        let cs = build_general(bs).unwrap();
        assert!(cs.c0_chol.is_some());
        let mut cs_dense = cs.clone();
        cs_dense.c0_chol = None;
        let s = random_stiefel(n, &mut rng);
        let v = tangent_project(&s, &complex_gaussian(n * n * n, n, &mut rng)).unwrap();
        let fast = ProjectorContext::new(&cs, s.as_matrix()).unwrap();
        assert!(matches!(fast, ProjectorContext::Woodbury { .. }));
        let dense = ProjectorContext::new(&cs_dense, s.as_matrix()).unwrap();
        assert!(matches!(dense, ProjectorContext::DenseEigen { .. }));
        let a = fast.apply(s.as_matrix(), v.as_matrix());
        let b = dense.apply(s.as_matrix(), v.as_matrix());
        assert!(
            (&a - &b).norm() < 1e-9 * a.norm().max(1.0),
            "Woodbury and dense projections differ by {:.3e}",
            (&a - &b).norm()
        );
    }

    #[test]
    fn constraint_values_invariant_under_mixing_on_feasible_points() {
        let mut rng = SeededStream::new(78, 0).rng();
        let n = 2;
        for cs in [
            build_general(vec![unit_b(n, &mut rng)]).unwrap(),
            build_element_fixing(n, &[1], &[2]).unwrap(),
        ] {
            let s0 = random_stiefel(n, &mut rng);
            let feasible = feasibility_descent(&s0, &cs, &FlowConfig::default())
                .unwrap()
                .point;
            let feasible = project_to_constraints(&feasible, &cs).unwrap();
            let w = WTransform::new(haar_unitary(n * n, &mut rng)).unwrap();
            let mixed = apply_w(&w, &feasible).unwrap();
            let h0 = cs.h_values(&feasible);
            let h1 = cs.h_values(&mixed);
            for (a, b) in h0.iter().zip(h1.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn feasibility_immediate_when_already_feasible() {
        let mut rng = SeededStream::new(79, 0).rng();
        let n = 2;
        let cs = build_element_fixing(n, &[1], &[2]).unwrap();
        let s0 = random_stiefel(n, &mut rng);
        let first = feasibility_descent(&s0, &cs, &FlowConfig::default()).unwrap();
        let pinned = project_to_constraints(&first.point, &cs).unwrap();
        let again = feasibility_descent(&pinned, &cs, &FlowConfig::default()).unwrap();
        assert_eq!(again.iterations, 0);
        assert!(again.residual < 1e-12);
    }

    #[test]
    fn feasibility_descends_to_entrywise_zero() {
        let mut rng = SeededStream::new(80, 0).rng();
        let cs = build_element_fixing(2, &[1], &[2]).unwrap();
        let s0 = random_stiefel(2, &mut rng);
        let r = feasibility_descent(&s0, &cs, &FlowConfig::default()).unwrap();
        assert!(r.residual < 1e-10);
        for l in 0..4 {
            let entry = r.point.as_matrix()[(l * 2, 1)].norm();
            assert!(entry <= 1e-6, "entry {entry:.3e}");
        }
        assert!(r.point.drift() < 2e-4);
    }

    #[test]
    fn feasibility_series_is_monotone() {
        let mut rng = SeededStream::new(81, 0).rng();
        let cs = build_general(vec![unit_b(3, &mut rng), unit_b(3, &mut rng)]).unwrap();
        let s0 = random_stiefel(3, &mut rng);
        let t = feasibility_flow(&s0, &FlowConfig::default(), &cs).unwrap();
        assert_eq!(t.stop_reason, StopReason::FeasibilityReached);
        for w in t.objective_series.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn constrained_flow_reaches_analytic_optimum() {
        let mut rng = SeededStream::new(82, 0).rng();
        let n = 3;
        let rho = vec![0.5, 0.3, 0.2];
        let p = ControlProblem::with_projector_target(rho).unwrap();
        let i1 = vec![3];
        let i2 = vec![1];
        let jmax = analytic_jmax_element_fixing(&p, &i1, &i2).unwrap();
        assert!((jmax - 0.5).abs() < 1e-14);
        let cs = build_element_fixing(n, &i1, &i2).unwrap();
        let s0 = random_stiefel(n, &mut rng);
        let feasible = feasibility_descent(&s0, &cs, &FlowConfig::default()).unwrap();
        let start = project_to_constraints(&feasible.point, &cs).unwrap();
        let cfg = FlowConfig {
            target_value: Some(jmax),
            ..Default::default()
        };
        let t = flow_ascent(&start, &p, &cfg, VectorField::Constrained(&cs)).unwrap();
        assert!(t.converged, "stopped by {:?}", t.stop_reason);
        assert!((t.j_final() - jmax).abs() <= 0.01);
        assert!(cs.max_violation(t.final_point.as_matrix()) <= 1e-6);
        assert!(t.final_point.drift() < 2e-4);
    }

    #[test]
    fn analytic_jmax_cases() {
        let p = ControlProblem::with_projector_target(vec![0.5, 0.3, 0.2]).unwrap();
        // Target row unconstrained: full control survives.
        assert_eq!(analytic_jmax_element_fixing(&p, &[1], &[2]).unwrap(), 1.0);
        // Zero-mass columns cost nothing.
        let p2 = ControlProblem::with_projector_target(vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(analytic_jmax_element_fixing(&p2, &[3], &[3]).unwrap(), 1.0);
        // Non-projector observable is out of scope for the formula.
        let p3 = ControlProblem::new(vec![0.5, 0.5], vec![0.3, 1.0]).unwrap();
        assert!(analytic_jmax_element_fixing(&p3, &[2], &[1]).is_err());
    }

    #[test]
    fn text_roundtrip_general_and_fix() {
        let mut rng = SeededStream::new(83, 0).rng();
        let cs = build_general(vec![unit_b(2, &mut rng)]).unwrap();
        let text = write_constraints(&cs);
        let back = parse_constraints(&text).unwrap();
        assert_eq!(back.q(), cs.q());
        let s = random_stiefel(2, &mut rng);
        let h0 = cs.h_values(&s);
        let h1 = back.h_values(&s);
        for (a, b) in h0.iter().zip(h1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let cs = build_element_fixing(3, &[1, 3], &[2, 1]).unwrap();
        let text = write_constraints(&cs);
        assert!(text.contains("fix 1 1"));
        let back = parse_constraints(&text).unwrap();
        assert_eq!(back.q(), cs.q());

        assert!(parse_constraints("nonsense 1 2\n").is_err());
        assert!(parse_constraints("n 2\n").is_err());
        assert!(parse_constraints("n 2\nb 1 0 0 0 0 0 0 0\nfix 1 1\n").is_err());
    }
}
