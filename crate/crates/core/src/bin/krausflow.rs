// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Command-line harness: experiment drivers with CSV / JSON-lines emission.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use krausflow::constraints::{self, parse_constraints};
use krausflow::error::Error;
use krausflow::experiments::{
    aggregate, Harness, RhoKind, ScalingMode, ThetaKind,
};
use krausflow::flow::FlowConfig;
use krausflow::io::{
    render_element_fixing_summaries, render_general_summaries, sibling, write_aggregates,
    write_histogram, write_run_records, write_trajectory, OutputFormat,
};
use krausflow::landscape::dim_max_manifold;

#[derive(Parser, Debug)]
#[command(
    name = "krausflow",
    version,
    about = "Gradient-flow optimization of Kraus-map control objectives on the complex Stiefel manifold",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// System dimension N (subcommand-specific default).
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Zero-eigenvalue count of rho, where applicable.
    #[arg(long, global = true)]
    d0: Option<usize>,

    /// Top-eigenvalue degeneracy of Theta, where applicable.
    #[arg(long, global = true)]
    e1: Option<usize>,

    /// Runs / samples / restarts, depending on the subcommand.
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Master seed; fixes every random draw of the invocation.
    #[arg(long, global = true, default_value_t = 12345)]
    seed: u64,

    /// Objective gap that terminates a flow.
    #[arg(long, global = true, default_value_t = 0.01)]
    stop_eps: f64,

    /// Hard ceiling on the orthonormality drift along trajectories.
    #[arg(long, global = true, default_value_t = 2e-4)]
    drift_tol: f64,

    /// Accepted-step budget per flow.
    #[arg(long, global = true)]
    max_steps: Option<u64>,

    /// Output file; experiments derive sibling files (<out>.agg.csv etc).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Initial-state kind: pure | mixed | maximally-mixed | rank:<k>.
    #[arg(long, global = true)]
    rho: Option<String>,

    /// Observable kind: projector | degenerate:<e1>.
    #[arg(long, global = true)]
    theta: Option<String>,

    /// Record stream encoding.
    #[arg(long, global = true, default_value = "csv")]
    format: String,

    /// Measure wall-clock per run (off by default so output files are
    /// byte-reproducible).
    #[arg(long, global = true, default_value_t = false)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Objective distribution at uniformly random (S, rho) pairs.
    SampleObjective,
    /// Flows to the top of the landscape from three initial-state families.
    TrapScan,
    /// Search-effort scaling across N at fixed rank (--rho rank:<k>) or
    /// fixed d0 (--d0).
    ScanN,
    /// Median search effort over the (d0, e1) degeneracy grid.
    ScanDegeneracy,
    /// Paired incoherent-vs-coherent comparison at the unitary ceiling.
    CompareUnitary,
    /// Constrained optimization protocols.
    Constrained {
        /// general | element-fixing.
        #[arg(long, default_value = "general")]
        protocol: String,
        /// Text file with an explicit constraint set (overrides --protocol).
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// One recorded trajectory with a per-step CSV trace.
    Flow,
    /// Runs the built-in invariant battery.
    Selftest,
}

fn flow_config(cli: &Cli) -> Result<FlowConfig, Error> {
    let mut cfg = FlowConfig {
        stop_eps: cli.stop_eps,
        drift_hard_limit: cli.drift_tol,
        ..Default::default()
    };
    if cfg.drift_repair_threshold >= cfg.drift_hard_limit {
        cfg.drift_repair_threshold = cfg.drift_hard_limit / 20.0;
    }
    if let Some(ms) = cli.max_steps {
        cfg.max_steps = ms;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let format = OutputFormat::parse(&cli.format)
        .ok_or_else(|| Error::Parse(format!("unknown --format '{}'", cli.format)))?;
    let mut harness = Harness::new(cli.seed);
    harness.flow = flow_config(cli)?;
    harness.timing = cli.timing;

    match &cli.command {
        Command::SampleObjective => {
            let n = cli.n.unwrap_or(10);
            let samples = cli.runs.unwrap_or(10_000);
            let d = harness.objective_distribution(n, samples)?;
            println!(
                "sample-objective n={n} samples={samples} mean={} std={}",
                d.mean, d.std
            );
            if let Some(out) = &cli.out {
                write_histogram(out, &d)?;
            }
        }
        Command::TrapScan => {
            let n = cli.n.unwrap_or(5);
            let starts = cli.runs.unwrap_or(100);
            let records = harness.trap_scan(n, starts)?;
            let converged = records.iter().filter(|r| r.converged).count();
            println!(
                "trap-scan n={n} runs={} converged={converged}/{} convergence_rate={}",
                records.len(),
                records.len(),
                converged as f64 / records.len() as f64
            );
            if let Some(out) = &cli.out {
                write_run_records(out, &records, format)?;
                write_aggregates(&sibling(out, "agg"), &aggregate(&records))?;
            }
        }
        Command::ScanN => {
            let n_max = cli.n.unwrap_or(8);
            if n_max < 2 {
                return Err(Error::ContractViolation("--n must be at least 2".into()));
            }
            let runs = cli.runs.unwrap_or(50);
            let mode = match (&cli.rho, cli.d0) {
                (Some(spec), _) => match RhoKind::parse(spec)? {
                    RhoKind::Rank(k) => ScalingMode::FixedRank(k),
                    RhoKind::Pure => ScalingMode::FixedRank(1),
                    RhoKind::Mixed | RhoKind::MaximallyMixed => ScalingMode::FixedD0(0),
                },
                (None, Some(d0)) => ScalingMode::FixedD0(d0),
                (None, None) => ScalingMode::FixedD0(0),
            };
            let mut ns: Vec<usize> = (2..=n_max).collect();
            if let ScalingMode::FixedRank(k) = mode {
                ns.retain(|&n| n >= k.max(2));
            }
            if let ScalingMode::FixedD0(d0) = mode {
                ns.retain(|&n| n > d0);
            }
            let records = harness.scaling(&ns, mode, runs)?;
            let rows = aggregate(&records);
            for row in &rows {
                println!(
                    "scan-n n={} d0={} mean_tau={} mean_lambda={}",
                    row.n, row.d0, row.mean_tau, row.mean_lambda
                );
            }
            if let Some(out) = &cli.out {
                write_run_records(out, &records, format)?;
                write_aggregates(&sibling(out, "agg"), &rows)?;
            }
        }
        Command::ScanDegeneracy => {
            let n = cli.n.unwrap_or(6);
            let runs = cli.runs.unwrap_or(25);
            let report = harness.degeneracy(n, runs)?;
            println!(
                "scan-degeneracy n={n} runs_per_cell={runs} cells={} spearman_tau_dim={}",
                report.aggregates.len(),
                report.spearman_tau_dim
            );
            if let Some(out) = &cli.out {
                write_run_records(out, &report.records, format)?;
                write_aggregates(&sibling(out, "agg"), &report.aggregates)?;
            }
        }
        Command::CompareUnitary => {
            let n_max = cli.n.unwrap_or(8);
            let runs = cli.runs.unwrap_or(50);
            let kinds = match &cli.rho {
                Some(spec) => vec![RhoKind::parse(spec)?],
                None => vec![RhoKind::Pure, RhoKind::Mixed],
            };
            let ns: Vec<usize> = (2..=n_max).collect();
            let records = harness.compare_unitary(&ns, runs, &kinds)?;
            for row in aggregate(&records) {
                println!(
                    "compare-unitary n={} control={} mean_tau={}",
                    row.n, row.control_kind, row.mean_tau
                );
            }
            if let Some(out) = &cli.out {
                write_run_records(out, &records, format)?;
                write_aggregates(&sibling(out, "agg"), &aggregate(&records))?;
            }
        }
        Command::Constrained {
            protocol,
            constraints,
        } => {
            if let Some(path) = constraints {
                let text = std::fs::read_to_string(path)?;
                let cs = parse_constraints(&text)?;
                let restarts = cli.runs.unwrap_or(10);
                let report = harness.constrained_custom(&cs, restarts)?;
                let s = &report.summaries[0];
                println!(
                    "constrained custom n={} q={} restarts={} spread={} failures={}",
                    s.n, cs.q(), s.restarts, s.spread, s.feasibility_failures
                );
                if let Some(out) = &cli.out {
                    write_run_records(out, &report.records, format)?;
                    std::fs::write(
                        sibling(out, "sets"),
                        render_general_summaries(&report.summaries),
                    )?;
                }
                return Ok(ExitCode::SUCCESS);
            }
            match protocol.as_str() {
                "general" => {
                    let n_max = cli.n.unwrap_or(4).min(4).max(2);
                    let ns: Vec<usize> = (2..=n_max).collect();
                    let restarts = cli.runs.unwrap_or(10);
                    let report = harness.constrained_general(&ns, 5, 5, restarts)?;
                    println!(
                        "constrained general ns={ns:?} sets={} max_spread={}",
                        report.summaries.len(),
                        report.max_spread()
                    );
                    if let Some(out) = &cli.out {
                        write_run_records(out, &report.records, format)?;
                        std::fs::write(
                            sibling(out, "sets"),
                            render_general_summaries(&report.summaries),
                        )?;
                    }
                }
                "element-fixing" => {
                    let n_max = cli.n.unwrap_or(5).min(5).max(2);
                    let ns: Vec<usize> = (2..=n_max).collect();
                    let runs = cli.runs.unwrap_or(25);
                    let report = harness.constrained_element_fixing(&ns, runs)?;
                    println!(
                        "constrained element-fixing ns={ns:?} configs={} max_abs_deviation={}",
                        report.configs.len(),
                        report.max_abs_deviation()
                    );
                    if let Some(out) = &cli.out {
                        write_run_records(out, &report.records, format)?;
                        std::fs::write(
                            sibling(out, "sets"),
                            render_element_fixing_summaries(&report.configs),
                        )?;
                    }
                }
                other => {
                    return Err(Error::Parse(format!(
                        "unknown --protocol '{other}' (general | element-fixing)"
                    )));
                }
            }
        }
        Command::Flow => {
            let n = cli.n.unwrap_or(5);
            let rho = match &cli.rho {
                Some(spec) => RhoKind::parse(spec)?,
                None => RhoKind::Mixed,
            };
            let theta = match (&cli.theta, cli.e1) {
                (Some(spec), _) => ThetaKind::parse(spec)?,
                (None, Some(e1)) => ThetaKind::Degenerate(e1),
                (None, None) => ThetaKind::Projector,
            };
            let (trajectory, record) = harness.single_flow(n, rho, theta)?;
            println!(
                "flow n={n} tau={} lambda={} j_initial={} j_final={} converged={}",
                record.tau, record.lambda, record.j_initial, record.j_final, record.converged
            );
            if let Some(out) = &cli.out {
                write_trajectory(out, &trajectory)?;
            }
        }
        Command::Selftest => {
            let failures = selftest()?;
            if failures > 0 {
                eprintln!("selftest: {failures} check(s) failed");
                return Ok(ExitCode::from(2));
            }
            println!("selftest: all checks passed");
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Quick invariant battery over every subsystem; returns the failure count.
fn selftest() -> Result<usize, Error> {
    use krausflow::landscape::{
        gradient, hessian_apply, objective, objective_yform, ControlProblem, HessianForm,
    };
    use krausflow::matrix::hs_inner;
    use krausflow::sampling::{complex_gaussian, haar_unitary, uniform_simplex, SeededStream};
    use krausflow::stiefel::{
        apply_w, distance_to_unitary_submanifold, random_stiefel, tangent_project, WTransform,
    };

    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {}", if ok { "ok  " } else { "FAIL" }, name);
        if !ok {
            failures += 1;
        }
    };

    let mut rng = SeededStream::new(7, 0).rng();

    // Tangent projector: idempotent + self-adjoint.
    {
        let s = random_stiefel(3, &mut rng);
        let a = complex_gaussian(27, 3, &mut rng);
        let b = complex_gaussian(27, 3, &mut rng);
        let pa = tangent_project(&s, &a)?;
        let pb = tangent_project(&s, &b)?;
        let ppa = tangent_project(&s, pa.as_matrix())?;
        let idem = (pa.as_matrix() - ppa.as_matrix()).norm() < 1e-10;
        let sa = (hs_inner(pa.as_matrix(), &b)? - hs_inner(&a, pb.as_matrix())?).abs() < 1e-10;
        check("tangent projector idempotent", idem);
        check("tangent projector self-adjoint", sa);
    }

    // Objective forms agree; value respects the bounds.
    {
        let s = random_stiefel(3, &mut rng);
        let p = ControlProblem::with_projector_target(uniform_simplex(3, &mut rng))?;
        let j = objective(&s, &p)?;
        let y = objective_yform(&s, &p)?;
        check("objective forms agree", (j - y).abs() < 1e-12);
        check("objective within bounds", (0.0..=1.0).contains(&j));
    }

    // Gradient against central finite differences.
    {
        let s = random_stiefel(2, &mut rng);
        let p = ControlProblem::with_projector_target(uniform_simplex(2, &mut rng))?;
        let g = gradient(&s, &p)?;
        let d = tangent_project(&s, &complex_gaussian(8, 2, &mut rng))?;
        let h = 1e-6;
        let shift = |sign: f64| -> Result<f64, Error> {
            let m = s.as_matrix() + d.as_matrix() * num_complex::Complex64::new(sign * h, 0.0);
            objective(&krausflow::stiefel::retract(&m)?, &p)
        };
        let fd = (shift(1.0)? - shift(-1.0)?) / (2.0 * h);
        let an = hs_inner(g.as_matrix(), d.as_matrix())?;
        check(
            "gradient matches finite differences",
            (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
        );
        // Hessian-vector product is linear.
        let v = tangent_project(&s, &complex_gaussian(8, 2, &mut rng))?;
        let hv = hessian_apply(&s, &p, &v, HessianForm::General)?;
        let hv2 = hessian_apply(&s, &p, &v, HessianForm::General)?;
        check(
            "hessian apply deterministic",
            (hv.as_matrix() - hv2.as_matrix()).norm() == 0.0,
        );
    }

    // Objective invariance under block mixing.
    {
        let s = random_stiefel(2, &mut rng);
        let p = ControlProblem::with_projector_target(uniform_simplex(2, &mut rng))?;
        let w = WTransform::new(haar_unitary(4, &mut rng))?;
        let diff = (objective(&s, &p)? - objective(&apply_w(&w, &s)?, &p)?).abs();
        check("objective W-invariant", diff < 1e-10);
    }

    // Flow: drift contract, monotone ascent, convergence.
    {
        let s0 = random_stiefel(3, &mut rng);
        let p = ControlProblem::with_projector_target(uniform_simplex(3, &mut rng))?;
        let t = krausflow::flow::flow_ascent(
            &s0,
            &p,
            &FlowConfig::default(),
            krausflow::flow::VectorField::FullGradient,
        )?;
        check("flow converges", t.converged && t.j_final() > 0.99);
        check(
            "flow drift contract",
            t.drift_series.iter().all(|&d| d < 2e-4),
        );
        check(
            "flow monotone ascent",
            t.objective_series.windows(2).all(|w| w[1] >= w[0] - 1e-8),
        );
    }

    // Unitary submanifold invariance.
    {
        let u0 = haar_unitary(3, &mut rng);
        let p = ControlProblem::with_projector_target(uniform_simplex(3, &mut rng))?;
        let t = krausflow::flow::flow_unitary(&u0, &p, &FlowConfig::default())?;
        check(
            "unitary flow stays on submanifold",
            distance_to_unitary_submanifold(&t.final_point) <= 1e-6,
        );
    }

    // dim(M_max) formula spot values.
    check(
        "dim formula",
        dim_max_manifold(2, 1, 1)? == 20 && dim_max_manifold(10, 0, 1)? == 1900,
    );

    // Constrained optimum against the analytic value.
    {
        let p = ControlProblem::with_projector_target(vec![0.5, 0.3, 0.2])?;
        let cs = constraints::build_element_fixing(3, &[3], &[1])?;
        let jmax = constraints::analytic_jmax_element_fixing(&p, &[3], &[1])?;
        let s0 = random_stiefel(3, &mut rng);
        let feas = constraints::feasibility_descent(&s0, &cs, &FlowConfig::default())?;
        let start = constraints::project_to_constraints(&feas.point, &cs)?;
        let cfg = FlowConfig {
            target_value: Some(jmax),
            ..Default::default()
        };
        let t = krausflow::flow::flow_ascent(
            &start,
            &p,
            &cfg,
            krausflow::flow::VectorField::Constrained(&cs),
        )?;
        check(
            "constrained flow reaches analytic optimum",
            (t.j_final() - jmax).abs() <= 0.01,
        );
    }

    Ok(failures)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(Error::Parse(msg)) | Err(Error::ContractViolation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(2)
        }
    }
}
