// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input is numerically degenerate (rank-deficient, singular, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A documented precondition of the operation was violated.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// The request exceeds what this implementation supports.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// The ODE integration could not be continued safely.
    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    /// A trajectory left an invariant submanifold it must stay on.
    #[error("invariance violation: {0}")]
    InvarianceViolation(String),

    /// The feasibility phase stalled above its residual threshold.
    #[error("feasibility failure: {0}")]
    FeasibilityFailure(String),

    /// A matrix constructor was handed NaN or infinite entries.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
