// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Seeded random generation of problem data: simplex-distributed spectra,
//! density matrices with a prescribed zero count, binary observables with a
//! prescribed top degeneracy, and Haar unitaries.
//!
//! Every sampler draws from a [`SeededStream`]-derived generator, so a
//! `(seed, stream_id)` pair pins the byte-exact output of any experiment no
//! matter how runs are scheduled.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{qr_phase_fixed, CMatrix};

/// A reproducible random stream: `seed` selects the experiment, `stream_id`
/// the independent substream of one run within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl SeededStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Substream for run `index` of the experiment with this seed.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: self
                .stream_id
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(index + 1),
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Complex standard-Gaussian matrix: entries `(x + iy)/sqrt(2)` with
/// `x, y ~ N(0,1)`, so each entry has unit variance.
pub fn complex_gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    // Row-major fill order keeps the stream layout independent of the
    // storage convention of the backing matrix type.
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(r, c)] = Complex64::new(re * inv_sqrt2, im * inv_sqrt2);
        }
    }
    m
}

/// Uniform sample from the standard simplex via exponential normalization:
/// `x_i = -log a_i` with `a_i ~ U(0,1)`, `y_i = x_i / sum x`. The last
/// component is set by subtraction so the result sums to 1 exactly.
pub fn uniform_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "uniform_simplex requires n >= 1");
    if n == 1 {
        return vec![1.0];
    }
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = Open01.sample(rng);
            -a.ln()
        })
        .collect();
    let total: f64 = x.iter().sum();
    let mut y: Vec<f64> = x.iter().map(|v| v / total).collect();
    let head: f64 = y[..n - 1].iter().sum();
    y[n - 1] = 1.0 - head;
    // The subtraction can land an ulp below zero; clamp it.
    if y[n - 1] < 0.0 {
        y[n - 1] = 0.0;
    }
    y
}

/// Where the zero eigenvalues of a sampled density matrix go.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroPlacement {
    /// Zeros occupy the leading diagonal slots, mass sits on the trailing ones.
    LeadingZeros,
    /// Zero positions are drawn at random. The top slot (the target index of
    /// a projector observable) is always among the zeros when `d0 >= 1`, so
    /// the initial state never coincides with the target state.
    RandomPositions,
}

/// Diagonal of a random density matrix with exactly `d0` zero eigenvalues;
/// the nonzero part is flat-simplex distributed.
pub fn random_rho<R: Rng>(
    n: usize,
    d0: usize,
    placement: ZeroPlacement,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n < 1 || d0 >= n {
        return Err(Error::ContractViolation(format!(
            "random_rho: need 0 <= d0 < n, got n={n}, d0={d0}"
        )));
    }
    let mass = uniform_simplex(n - d0, rng);
    if d0 == 0 {
        return Ok(mass);
    }
    let mut rho = vec![0.0; n];
    match placement {
        ZeroPlacement::LeadingZeros => {
            rho[d0..].copy_from_slice(&mass);
        }
        ZeroPlacement::RandomPositions => {
            // Choose n-d0 support slots among the first n-1 indices
            // (partial Fisher-Yates), leaving index n zero.
            let mut idx: Vec<usize> = (0..n - 1).collect();
            for i in 0..(n - d0) {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            let mut support: Vec<usize> = idx[..n - d0].to_vec();
            support.sort_unstable();
            for (k, &pos) in support.iter().enumerate() {
                rho[pos] = mass[k];
            }
        }
    }
    Ok(rho)
}

/// The maximally mixed state `diag(1/n, ..., 1/n)`.
pub fn maximally_mixed(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Pure state `diag(1, 0, ..., 0)`: all mass on the first level.
pub fn pure_state(n: usize) -> Vec<f64> {
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    rho
}

/// Binary observable spectrum with an `e1`-fold degenerate top eigenvalue 1
/// on the trailing indices and 0 elsewhere. `e1 = 1` is the projector onto
/// the top level.
pub fn random_theta(n: usize, e1: usize) -> Result<Vec<f64>> {
    if e1 < 1 || e1 > n {
        return Err(Error::ContractViolation(format!(
            "random_theta: need 1 <= e1 <= n, got n={n}, e1={e1}"
        )));
    }
    let mut theta = vec![0.0; n];
    for t in theta.iter_mut().skip(n - e1) {
        *t = 1.0;
    }
    Ok(theta)
}

/// Haar-distributed unitary: complex Gaussian matrix pushed through the
/// phase-fixed QR.
pub fn haar_unitary<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    loop {
        let g = complex_gaussian(n, n, rng);
        // Rank deficiency has probability zero; retry if it happens anyway.
        if let Ok((q, _)) = qr_phase_fixed(&g) {
            return q;
        }
    }
}
