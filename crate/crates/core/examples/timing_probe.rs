// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Preview of the acceptance-suite trend statistics.

use krausflow::experiments::{aggregate, mean, spearman, ControlKind, Harness, RhoKind, ScalingMode};
use std::time::Instant;

fn main() {
    let h = Harness::new(314159);
    let t0 = Instant::now();
    let recs = h.scaling(&[2, 8], ScalingMode::FixedRank(1), 50).unwrap();
    let rows = aggregate(&recs);
    println!(
        "fixed-rank-1: tau {:.1} vs {:.1} (ratio {:.2}) [{:.1?}]",
        rows[0].mean_tau,
        rows[1].mean_tau,
        rows[1].mean_tau / rows[0].mean_tau,
        t0.elapsed()
    );
    let t0 = Instant::now();
    let recs = h.scaling(&[2, 8], ScalingMode::FixedD0(0), 50).unwrap();
    let rows = aggregate(&recs);
    println!(
        "fixed-d0-0: tau {:.1} vs {:.1} (ratio {:.2}) [{:.1?}]",
        rows[0].mean_tau,
        rows[1].mean_tau,
        rows[1].mean_tau / rows[0].mean_tau,
        t0.elapsed()
    );
    let t0 = Instant::now();
    let recs = h.compare_unitary(&[4, 6, 8], 50, &[RhoKind::Mixed]).unwrap();
    for row in aggregate(&recs) {
        println!(
            "pair N={} {}: mean tau {:.1}",
            row.n, row.control_kind, row.mean_tau
        );
    }
    println!("[pairs {:?}]", t0.elapsed());
    let _ = ControlKind::Kraus;
    let t0 = Instant::now();
    let report = h.degeneracy(6, 10).unwrap();
    println!(
        "degeneracy N=6 10/cell: spearman {:.3} [{:.1?}]",
        report.spearman_tau_dim,
        t0.elapsed()
    );
    let taus: Vec<f64> = report.aggregates.iter().map(|a| a.median_tau).collect();
    let dims: Vec<f64> = report.aggregates.iter().map(|a| a.dim.unwrap() as f64).collect();
    println!("   (recheck: {:.3})", spearman(&taus, &dims));
    let _ = mean(&taus);
}
