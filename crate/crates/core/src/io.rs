// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! CSV and JSON-lines emission for run records, aggregates, histograms and
//! per-step trajectory traces. Floats are written with Rust's shortest
//! round-trip formatting, which is deterministic for identical bit patterns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::experiments::{
    AggregateRow, ElementFixingSummary, GeneralSetSummary, ObjectiveDistribution, RunRecord,
};
use crate::flow::Trajectory;

/// Exact header of every run-record CSV.
pub const RUN_RECORD_HEADER: &str =
    "experiment,seed,n,d0,e1,rho_kind,control_kind,tau,lambda,j_initial,j_final,converged,wall_ms";

/// Output encoding for record streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

impl OutputFormat {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "csv" => Some(OutputFormat::Csv),
            "jsonlines" => Some(OutputFormat::JsonLines),
            _ => None,
        }
    }
}

pub fn render_run_records(records: &[RunRecord], format: OutputFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(RUN_RECORD_HEADER);
            out.push('\n');
            for r in records {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.experiment,
                    r.seed,
                    r.n,
                    r.d0,
                    r.e1,
                    r.rho_kind,
                    r.control_kind,
                    r.tau,
                    r.lambda,
                    r.j_initial,
                    r.j_final,
                    r.converged,
                    r.wall_ms
                );
            }
        }
        OutputFormat::JsonLines => {
            for r in records {
                out.push_str(&serde_json::to_string(r).expect("RunRecord serializes"));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_run_records(
    path: &Path,
    records: &[RunRecord],
    format: OutputFormat,
) -> Result<()> {
    fs::write(path, render_run_records(records, format)?)?;
    Ok(())
}

pub fn render_aggregates(rows: &[AggregateRow]) -> String {
    let with_dim = rows.iter().any(|r| r.dim.is_some());
    let mut out = String::from(
        "n,d0,e1,control_kind,count,mean_tau,std_tau,median_tau,mean_lambda,std_lambda,median_lambda,convergence_rate",
    );
    if with_dim {
        out.push_str(",dim");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.d0,
            r.e1,
            r.control_kind,
            r.count,
            r.mean_tau,
            r.std_tau,
            r.median_tau,
            r.mean_lambda,
            r.std_lambda,
            r.median_lambda,
            r.convergence_rate
        );
        if with_dim {
            let _ = write!(out, ",{}", r.dim.unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    fs::write(path, render_aggregates(rows))?;
    Ok(())
}

pub fn render_histogram(d: &ObjectiveDistribution) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let width = (d.hi - d.lo) / d.bins.len() as f64;
    for (i, &count) in d.bins.iter().enumerate() {
        let lo = d.lo + width * i as f64;
        let hi = d.lo + width * (i + 1) as f64;
        let _ = writeln!(out, "{lo},{hi},{count}");
    }
    out
}

pub fn write_histogram(path: &Path, d: &ObjectiveDistribution) -> Result<()> {
    fs::write(path, render_histogram(d))?;
    Ok(())
}

/// Per-step trajectory trace: `sigma,J,drift,step_size`.
pub fn render_trajectory(t: &Trajectory) -> String {
    let mut out = String::from("sigma,J,drift,step_size\n");
    for s in &t.steps {
        let _ = writeln!(out, "{},{},{},{}", s.sigma, s.j, s.drift, s.step_size);
    }
    out
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    fs::write(path, render_trajectory(t))?;
    Ok(())
}

pub fn render_general_summaries(rows: &[GeneralSetSummary]) -> String {
    let mut out = String::from(
        "n,rho_index,set_index,n_b,restarts,feasibility_failures,j_best,j_worst,spread\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.rho_index,
            r.set_index,
            r.n_b,
            r.restarts,
            r.feasibility_failures,
            r.j_best,
            r.j_worst,
            r.spread
        );
    }
    out
}

pub fn render_element_fixing_summaries(rows: &[ElementFixingSummary]) -> String {
    let mut out = String::from("n,set_size,runs,feasibility_failures,max_abs_deviation\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.n, r.set_size, r.runs, r.feasibility_failures, r.max_abs_deviation
        );
    }
    out
}

/// Sibling path with an extra suffix before the extension:
/// `runs.csv` -> `runs.agg.csv`.
pub fn sibling(path: &Path, tag: &str) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let ext = path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}
