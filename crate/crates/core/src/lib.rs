// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Gradient-flow optimization of Kraus-map control objectives on the
//! complex Stiefel manifold.

pub mod constraints;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod io;
pub mod matrix;
pub mod landscape;
pub mod sampling;
pub mod stiefel;

pub use error::{Error, Result};
