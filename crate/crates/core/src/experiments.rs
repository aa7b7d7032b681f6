// Copyright 2026 Krausflow Contributors
// SPDX-License-Identifier: Apache-2.0

//! Experiment drivers mirroring the statistical landscape studies: objective
//! distributions at random controls, trap scans, scaling in N, degeneracy
//! grids, coherent-vs-incoherent comparisons, and constrained protocols.
//!
//! Determinism: every run draws from a substream derived from
//! `(master seed, global run index)`, runs execute in canonical index order,
//! and aggregates are pure functions of the run records. Re-running any
//! experiment with the same seed and configuration reproduces its output
//! files byte for byte (wall-clock timing is opt-in via `timing`).

use std::time::Instant;

use serde::Serialize;

use crate::constraints::{
    analytic_jmax_element_fixing, build_element_fixing, build_general, feasibility_descent,
    project_to_constraints, ConstraintOrigin, ConstraintSet,
};
use crate::error::{Error, Result};
use crate::flow::{flow_ascent, flow_unitary, FlowConfig, Trajectory, VectorField};
use crate::landscape::{dim_max_manifold, objective, ControlProblem};
use crate::matrix::CMatrix;
use crate::sampling::{
    complex_gaussian, haar_unitary, maximally_mixed, pure_state, random_rho, random_theta,
    uniform_simplex, SeededStream, ZeroPlacement,
};
use crate::stiefel::random_stiefel;
use num_complex::Complex64;
use rand::Rng;

/// Which control family produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Kraus,
    Unitary,
}

impl std::fmt::Display for ControlKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlKind::Kraus => write!(f, "kraus"),
            ControlKind::Unitary => write!(f, "unitary"),
        }
    }
}

/// How the initial state of a run is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoKind {
    /// All mass on the first level.
    Pure,
    /// Flat-simplex spectrum, no zero eigenvalues.
    Mixed,
    MaximallyMixed,
    /// Exactly `k` nonzero eigenvalues at random positions.
    Rank(usize),
}

impl RhoKind {
    pub fn label(&self) -> String {
        match self {
            RhoKind::Pure => "pure".into(),
            RhoKind::Mixed => "mixed".into(),
            RhoKind::MaximallyMixed => "maximally-mixed".into(),
            RhoKind::Rank(k) => format!("rank:{k}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "pure" => Ok(RhoKind::Pure),
            "mixed" => Ok(RhoKind::Mixed),
            "maximally-mixed" => Ok(RhoKind::MaximallyMixed),
            other => {
                if let Some(k) = other.strip_prefix("rank:") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad rank in --rho '{other}'")))?;
                    Ok(RhoKind::Rank(k))
                } else {
                    Err(Error::Parse(format!("unknown rho kind '{other}'")))
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            RhoKind::Pure => Ok(pure_state(n)),
            RhoKind::Mixed => Ok(uniform_simplex(n, rng)),
            RhoKind::MaximallyMixed => Ok(maximally_mixed(n)),
            RhoKind::Rank(k) => {
                if *k < 1 || *k > n {
                    return Err(Error::ContractViolation(format!(
                        "rank:{k} outside 1..={n}"
                    )));
                }
                random_rho(n, n - k, ZeroPlacement::RandomPositions, rng)
            }
        }
    }
}

/// Observable spectrum selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaKind {
    /// Projector onto the top level.
    Projector,
    /// Binary spectrum with an e1-fold degenerate top eigenvalue.
    Degenerate(usize),
}

impl ThetaKind {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "projector" => Ok(ThetaKind::Projector),
            other => {
                if let Some(e1) = other.strip_prefix("degenerate:") {
                    let e1: usize = e1
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad e1 in --theta '{other}'")))?;
                    Ok(ThetaKind::Degenerate(e1))
                } else {
                    Err(Error::Parse(format!("unknown theta kind '{other}'")))
                }
            }
        }
    }

    pub fn spectrum(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            ThetaKind::Projector => random_theta(n, 1),
            ThetaKind::Degenerate(e1) => random_theta(n, *e1),
        }
    }
}

/// One experiment outcome row, the unit of every CSV / JSON-lines export.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    /// Substream id that reproduces this run.
    pub seed: u64,
    pub n: usize,
    pub d0: usize,
    pub e1: usize,
    pub rho_kind: String,
    pub control_kind: ControlKind,
    pub tau: u64,
    pub lambda: f64,
    pub j_initial: f64,
    pub j_final: f64,
    pub converged: bool,
    pub wall_ms: u64,
}

/// Grouped statistics over run records, keyed by (n, d0, e1, control_kind).
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub n: usize,
    pub d0: usize,
    pub e1: usize,
    pub control_kind: ControlKind,
    pub count: usize,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub median_tau: f64,
    pub mean_lambda: f64,
    pub std_lambda: f64,
    pub median_lambda: f64,
    pub convergence_rate: f64,
    /// dim(M_max) for the group, attached by the degeneracy experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<u64>,
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n-1 normalization; 0 for singletons).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // Average rank over the tie group (1-based ranks).
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &slot in &idx[i..=j] {
            out[slot] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with midrank tie handling.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

/// Groups records by (n, d0, e1, control_kind) in canonical order and
/// computes the aggregate statistics. Pure function of the records.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, usize, usize, ControlKind)> = records
        .iter()
        .map(|r| (r.n, r.d0, r.e1, r.control_kind))
        .collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|&(n, d0, e1, control_kind)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| (r.n, r.d0, r.e1, r.control_kind) == (n, d0, e1, control_kind))
                .collect();
            let taus: Vec<f64> = group.iter().map(|r| r.tau as f64).collect();
            let lambdas: Vec<f64> = group.iter().map(|r| r.lambda).collect();
            let converged = group.iter().filter(|r| r.converged).count();
            AggregateRow {
                n,
                d0,
                e1,
                control_kind,
                count: group.len(),
                mean_tau: mean(&taus),
                std_tau: std_dev(&taus),
                median_tau: median(&taus),
                mean_lambda: mean(&lambdas),
                std_lambda: std_dev(&lambdas),
                median_lambda: median(&lambdas),
                convergence_rate: converged as f64 / group.len() as f64,
                dim: None,
            }
        })
        .collect()
}

/// Summary of the objective distribution at random controls.
#[derive(Debug, Clone)]
pub struct ObjectiveDistribution {
    pub n: usize,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    /// Histogram support: [theta_min, theta_max].
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Fan-out driver for all experiments. Holds the master seed, the shared
/// flow configuration, and the timing switch (off by default so output
/// files are byte-reproducible).
#[derive(Debug, Clone)]
pub struct Harness {
    pub seed: u64,
    pub flow: FlowConfig,
    pub timing: bool,
}

impl Harness {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            flow: FlowConfig::default(),
            timing: false,
        }
    }

    fn stream(&self, run_index: u64) -> SeededStream {
        SeededStream::new(self.seed, 0).substream(run_index)
    }

    fn clock(&self, t0: Instant) -> u64 {
        if self.timing {
            t0.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    fn record_from_trajectory(
        &self,
        experiment: &str,
        stream: &SeededStream,
        p: &ControlProblem,
        rho_kind: &str,
        control_kind: ControlKind,
        t: &Trajectory,
        wall_ms: u64,
    ) -> RunRecord {
        RunRecord {
            experiment: experiment.to_string(),
            seed: stream.stream_id,
            n: p.n(),
            d0: p.d0(),
            e1: p.e1(),
            rho_kind: rho_kind.to_string(),
            control_kind,
            tau: t.tau,
            lambda: t.lambda,
            j_initial: t.j_initial(),
            j_final: t.j_final(),
            converged: t.converged,
            wall_ms,
        }
    }

    /// Distribution of J at uniformly random (S, rho) pairs with the
    /// projector observable.
    pub fn objective_distribution(&self, n: usize, samples: usize) -> Result<ObjectiveDistribution> {
        let mut values = Vec::with_capacity(samples);
        for i in 0..samples {
            let mut rng = self.stream(i as u64).rng();
            let s = random_stiefel(n, &mut rng);
            let rho = uniform_simplex(n, &mut rng);
            let p = ControlProblem::with_projector_target(rho)?;
            values.push(objective(&s, &p)?);
        }
        let (lo, hi) = (0.0, 1.0);
        let mut bins = vec![0u64; HISTOGRAM_BINS];
        for &v in &values {
            let t = ((v - lo) / (hi - lo) * HISTOGRAM_BINS as f64).floor();
            let idx = (t as isize).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
            bins[idx] += 1;
        }
        Ok(ObjectiveDistribution {
            n,
            samples,
            mean: mean(&values),
            std: std_dev(&values),
            lo,
            hi,
            bins,
        })
    }

    /// Trap scan: `starts` flows per initial-state kind, projector target.
    pub fn trap_scan(&self, n: usize, starts: usize) -> Result<Vec<RunRecord>> {
        let kinds = [RhoKind::Pure, RhoKind::Mixed, RhoKind::MaximallyMixed];
        let mut records = Vec::new();
        let mut run_index = 0u64;
        for kind in kinds {
            for _ in 0..starts {
                let stream = self.stream(run_index);
                run_index += 1;
                let mut rng = stream.rng();
                let rho = kind.sample(n, &mut rng)?;
                let p = ControlProblem::with_projector_target(rho)?;
                let s0 = random_stiefel(n, &mut rng);
                let t0 = Instant::now();
                let t = flow_ascent(&s0, &p, &self.flow, VectorField::FullGradient)?;
                let wall = self.clock(t0);
                records.push(self.record_from_trajectory(
                    "trap-scan",
                    &stream,
                    &p,
                    &kind.label(),
                    ControlKind::Kraus,
                    &t,
                    wall,
                ));
            }
        }
        Ok(records)
    }

    /// Scaling scan: for each N either the rank (count of nonzero rho
    /// eigenvalues) or d0 is held fixed.
    pub fn scaling(
        &self,
        ns: &[usize],
        mode: ScalingMode,
        runs_per_point: usize,
    ) -> Result<Vec<RunRecord>> {
        let mut records = Vec::new();
        let mut run_index = 0u64;
        for &n in ns {
            let d0 = match mode {
                ScalingMode::FixedRank(k) => {
                    if k < 1 || k > n {
                        return Err(Error::ContractViolation(format!(
                            "fixed rank {k} invalid at N = {n}"
                        )));
                    }
                    n - k
                }
                ScalingMode::FixedD0(d0) => {
                    if d0 >= n {
                        return Err(Error::ContractViolation(format!(
                            "fixed d0 = {d0} invalid at N = {n}"
                        )));
                    }
                    d0
                }
            };
            let kind = RhoKind::Rank(n - d0);
            for _ in 0..runs_per_point {
                let stream = self.stream(run_index);
                run_index += 1;
                let mut rng = stream.rng();
                let rho = random_rho(n, d0, ZeroPlacement::RandomPositions, &mut rng)?;
                let p = ControlProblem::with_projector_target(rho)?;
                let s0 = random_stiefel(n, &mut rng);
                let t0 = Instant::now();
                let t = flow_ascent(&s0, &p, &self.flow, VectorField::FullGradient)?;
                let wall = self.clock(t0);
                records.push(self.record_from_trajectory(
                    "scan-n",
                    &stream,
                    &p,
                    &kind.label(),
                    ControlKind::Kraus,
                    &t,
                    wall,
                ));
            }
        }
        Ok(records)
    }

    /// Degeneracy grid over (d0, e1) at fixed N.
    pub fn degeneracy(&self, n: usize, runs_per_cell: usize) -> Result<DegeneracyReport> {
        let mut records = Vec::new();
        let mut run_index = 0u64;
        for d0 in 0..n {
            for e1 in 1..=n {
                let theta = random_theta(n, e1)?;
                for _ in 0..runs_per_cell {
                    let stream = self.stream(run_index);
                    run_index += 1;
                    let mut rng = stream.rng();
                    let rho = random_rho(n, d0, ZeroPlacement::RandomPositions, &mut rng)?;
                    let p = ControlProblem::new(rho, theta.clone())?;
                    let s0 = random_stiefel(n, &mut rng);
                    let t0 = Instant::now();
                    let t = flow_ascent(&s0, &p, &self.flow, VectorField::FullGradient)?;
                    let wall = self.clock(t0);
                    records.push(self.record_from_trajectory(
                        "scan-degeneracy",
                        &stream,
                        &p,
                        &RhoKind::Rank(n - d0).label(),
                        ControlKind::Kraus,
                        &t,
                        wall,
                    ));
                }
            }
        }
        let mut aggregates = aggregate(&records);
        for row in aggregates.iter_mut() {
            row.dim = Some(dim_max_manifold(row.n, row.d0, row.e1)?);
        }
        let med_tau: Vec<f64> = aggregates.iter().map(|a| a.median_tau).collect();
        let dims: Vec<f64> = aggregates.iter().map(|a| a.dim.unwrap() as f64).collect();
        let spearman_tau_dim = spearman(&med_tau, &dims);
        Ok(DegeneracyReport {
            records,
            aggregates,
            spearman_tau_dim,
        })
    }

    /// Paired coherent/incoherent comparison: one rho per run index, both
    /// control families stopped at the unitary ceiling rho_max - stop_eps.
    pub fn compare_unitary(
        &self,
        ns: &[usize],
        runs_per_point: usize,
        kinds: &[RhoKind],
    ) -> Result<Vec<RunRecord>> {
        let mut records = Vec::new();
        let mut run_index = 0u64;
        for &n in ns {
            for &kind in kinds {
                for _ in 0..runs_per_point {
                    let stream = self.stream(run_index);
                    run_index += 1;
                    let mut rng = stream.rng();
                    let rho = kind.sample(n, &mut rng)?;
                    let p = ControlProblem::with_projector_target(rho)?;
                    let mut cfg = self.flow.clone();
                    cfg.target_value = Some(p.rho_max());
                    let s0 = random_stiefel(n, &mut rng);
                    let t0 = Instant::now();
                    let tk = flow_ascent(&s0, &p, &cfg, VectorField::FullGradient)?;
                    let wall_k = self.clock(t0);
                    let u0 = haar_unitary(n, &mut rng);
                    let t0 = Instant::now();
                    let tu = flow_unitary(&u0, &p, &cfg)?;
                    let wall_u = self.clock(t0);
                    records.push(self.record_from_trajectory(
                        "compare-unitary",
                        &stream,
                        &p,
                        &kind.label(),
                        ControlKind::Kraus,
                        &tk,
                        wall_k,
                    ));
                    records.push(self.record_from_trajectory(
                        "compare-unitary",
                        &stream,
                        &p,
                        &kind.label(),
                        ControlKind::Unitary,
                        &tu,
                        wall_u,
                    ));
                }
            }
        }
        Ok(records)
    }

    /// General-B constrained protocol: per N, `rhos` initial states times
    /// `sets` random constraint families times `restarts` starts; the
    /// restart spread of the reached optimum flags candidate traps.
    pub fn constrained_general(
        &self,
        ns: &[usize],
        rhos: usize,
        sets: usize,
        restarts: usize,
    ) -> Result<ConstrainedGeneralReport> {
        let mut records = Vec::new();
        let mut summaries = Vec::new();
        let mut run_index = 0u64;
        for &n in ns {
            for rho_idx in 0..rhos {
                // One substream pins the state, one per set pins the family.
                let mut rho_rng = self.stream(1_000_000 + (n * 100 + rho_idx) as u64).rng();
                let rho = uniform_simplex(n, &mut rho_rng);
                let p = ControlProblem::with_projector_target(rho)?;
                for set_idx in 0..sets {
                    let mut set_rng = self
                        .stream(2_000_000 + ((n * 100 + rho_idx) * 100 + set_idx) as u64)
                        .rng();
                    let max_nb = n * n - n - 1;
                    let nb = set_rng.gen_range(1..=max_nb);
                    let bs: Vec<CMatrix> = (0..nb)
                        .map(|_| {
                            let g = complex_gaussian(n, n, &mut set_rng);
                            let norm = g.norm();
                            g / Complex64::new(norm, 0.0)
                        })
                        .collect();
                    let cs = build_general(bs)?;
                    let mut j_values = Vec::new();
                    let mut failures = 0usize;
                    for _ in 0..restarts {
                        let stream = self.stream(run_index);
                        run_index += 1;
                        let t0 = Instant::now();
                        let outcome = self.one_constrained_run(&stream, &p, &cs, None)?;
                        let wall = self.clock(t0);
                        match outcome {
                            ConstrainedOutcome::Feasible(t) => {
                                j_values.push(t.j_final());
                                records.push(self.record_from_trajectory(
                                    "constrained-general",
                                    &stream,
                                    &p,
                                    &RhoKind::Mixed.label(),
                                    ControlKind::Kraus,
                                    &t,
                                    wall,
                                ));
                            }
                            ConstrainedOutcome::FeasibilityFailed(record) => {
                                failures += 1;
                                records.push(record);
                            }
                        }
                    }
                    let (best, worst) = (
                        j_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        j_values.iter().cloned().fold(f64::INFINITY, f64::min),
                    );
                    summaries.push(GeneralSetSummary {
                        n,
                        rho_index: rho_idx,
                        set_index: set_idx,
                        n_b: nb,
                        restarts,
                        feasibility_failures: failures,
                        j_best: best,
                        j_worst: worst,
                        spread: if j_values.is_empty() {
                            f64::NAN
                        } else {
                            best - worst
                        },
                    });
                }
            }
        }
        Ok(ConstrainedGeneralReport { records, summaries })
    }

    /// Element-fixing constrained protocol: per N and per index-set size,
    /// `runs` random (I1, I2) draws, each optimized once and compared to
    /// the analytic constrained optimum.
    pub fn constrained_element_fixing(
        &self,
        ns: &[usize],
        runs_per_config: usize,
    ) -> Result<ElementFixingReport> {
        let mut records = Vec::new();
        let mut configs = Vec::new();
        let mut run_index = 0u64;
        for &n in ns {
            let max_m = (1..n)
                .filter(|m| m * m <= n * n - n - 1)
                .max()
                .ok_or_else(|| {
                    Error::ContractViolation(format!("no element-fixing sets exist at N = {n}"))
                })?;
            for m in 1..=max_m {
                let mut devs = Vec::new();
                let mut failures = 0usize;
                for _ in 0..runs_per_config {
                    let stream = self.stream(run_index);
                    run_index += 1;
                    let mut rng = stream.rng();
                    let rho = uniform_simplex(n, &mut rng);
                    let p = ControlProblem::with_projector_target(rho)?;
                    let i1 = random_subset(n, m, &mut rng);
                    let i2 = random_subset(n, m, &mut rng);
                    let cs = build_element_fixing(n, &i1, &i2)?;
                    let jmax = analytic_jmax_element_fixing(&p, &i1, &i2)?;
                    let mut cfg = self.flow.clone();
                    cfg.target_value = Some(jmax);
                    let t0 = Instant::now();
                    let outcome =
                        self.one_constrained_run_with_rng(&mut rng, &p, &cs, Some(&cfg))?;
                    let wall = self.clock(t0);
                    match outcome {
                        ConstrainedOutcome::Feasible(t) => {
                            devs.push((t.j_final() - jmax).abs());
                            records.push(self.record_from_trajectory(
                                "constrained-fix",
                                &stream,
                                &p,
                                &RhoKind::Mixed.label(),
                                ControlKind::Kraus,
                                &t,
                                wall,
                            ));
                        }
                        ConstrainedOutcome::FeasibilityFailed(record) => {
                            failures += 1;
                            records.push(record);
                        }
                    }
                }
                configs.push(ElementFixingSummary {
                    n,
                    set_size: m,
                    runs: runs_per_config,
                    feasibility_failures: failures,
                    max_abs_deviation: devs.iter().cloned().fold(0.0, f64::max),
                });
            }
        }
        Ok(ElementFixingReport { records, configs })
    }

    /// Ten-restart protocol on an explicitly supplied constraint set.
    pub fn constrained_custom(
        &self,
        cs: &ConstraintSet,
        restarts: usize,
    ) -> Result<ConstrainedGeneralReport> {
        let n = cs.n();
        let mut rho_rng = self.stream(3_000_000 + n as u64).rng();
        let rho = uniform_simplex(n, &mut rho_rng);
        let p = ControlProblem::with_projector_target(rho)?;
        let target = match cs.origin() {
            ConstraintOrigin::ElementFixing { rows, cols } => {
                Some(analytic_jmax_element_fixing(&p, rows, cols)?)
            }
            ConstraintOrigin::GeneralB { .. } => None,
        };
        let mut records = Vec::new();
        let mut j_values = Vec::new();
        let mut failures = 0;
        for run_index in 0..restarts {
            let stream = self.stream(run_index as u64);
            let cfg = target.map(|t| FlowConfig {
                target_value: Some(t),
                ..self.flow.clone()
            });
            let t0 = Instant::now();
            let outcome = self.one_constrained_run(&stream, &p, cs, cfg.as_ref())?;
            let wall = self.clock(t0);
            match outcome {
                ConstrainedOutcome::Feasible(t) => {
                    j_values.push(t.j_final());
                    records.push(self.record_from_trajectory(
                        "constrained",
                        &stream,
                        &p,
                        &RhoKind::Mixed.label(),
                        ControlKind::Kraus,
                        &t,
                        wall,
                    ));
                }
                ConstrainedOutcome::FeasibilityFailed(record) => {
                    failures += 1;
                    records.push(record);
                }
            }
        }
        let (best, worst) = (
            j_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            j_values.iter().cloned().fold(f64::INFINITY, f64::min),
        );
        let summary = GeneralSetSummary {
            n,
            rho_index: 0,
            set_index: 0,
            n_b: cs.q(),
            restarts,
            feasibility_failures: failures,
            j_best: best,
            j_worst: worst,
            spread: if j_values.is_empty() {
                f64::NAN
            } else {
                best - worst
            },
        };
        Ok(ConstrainedGeneralReport {
            records,
            summaries: vec![summary],
        })
    }

    fn one_constrained_run(
        &self,
        stream: &SeededStream,
        p: &ControlProblem,
        cs: &ConstraintSet,
        cfg: Option<&FlowConfig>,
    ) -> Result<ConstrainedOutcome> {
        let mut rng = stream.rng();
        self.one_constrained_run_with_rng(&mut rng, p, cs, cfg)
    }

    fn one_constrained_run_with_rng(
        &self,
        rng: &mut impl Rng,
        p: &ControlProblem,
        cs: &ConstraintSet,
        cfg: Option<&FlowConfig>,
    ) -> Result<ConstrainedOutcome> {
        let n = p.n();
        let s0 = random_stiefel(n, rng);
        let feasible = match feasibility_descent(&s0, cs, &self.flow) {
            Ok(r) => r,
            Err(Error::FeasibilityFailure(_)) => {
                let j = objective(&s0, p)?;
                return Ok(ConstrainedOutcome::FeasibilityFailed(RunRecord {
                    experiment: "constrained-feasibility-failure".into(),
                    seed: 0,
                    n,
                    d0: p.d0(),
                    e1: p.e1(),
                    rho_kind: RhoKind::Mixed.label(),
                    control_kind: ControlKind::Kraus,
                    tau: 0,
                    lambda: 0.0,
                    j_initial: j,
                    j_final: j,
                    converged: false,
                    wall_ms: 0,
                }));
            }
            Err(e) => return Err(e),
        };
        let start = project_to_constraints(&feasible.point, cs)?;
        let mut flow_cfg = cfg.cloned().unwrap_or_else(|| self.flow.clone());
        if flow_cfg.target_value.is_none() {
            // No analytic target: park on the constrained critical point.
            // At field norm g the remaining objective gap is ~ g^2 / (2 lambda),
            // orders below the 0.02 restart-spread budget.
            flow_cfg.stop_grad_norm = Some(flow_cfg.stop_grad_norm.unwrap_or(1e-5));
        }
        let t = flow_ascent(&start, p, &flow_cfg, VectorField::Constrained(cs))?;
        Ok(ConstrainedOutcome::Feasible(t))
    }

    /// One recorded flow for the `flow` CLI subcommand.
    pub fn single_flow(
        &self,
        n: usize,
        rho_kind: RhoKind,
        theta_kind: ThetaKind,
    ) -> Result<(Trajectory, RunRecord)> {
        let stream = self.stream(0);
        let mut rng = stream.rng();
        let rho = rho_kind.sample(n, &mut rng)?;
        let theta = theta_kind.spectrum(n)?;
        let p = ControlProblem::new(rho, theta)?;
        let s0 = random_stiefel(n, &mut rng);
        let t0 = Instant::now();
        let t = flow_ascent(&s0, &p, &self.flow, VectorField::FullGradient)?;
        let wall = self.clock(t0);
        let record = self.record_from_trajectory(
            "flow",
            &stream,
            &p,
            &rho_kind.label(),
            ControlKind::Kraus,
            &t,
            wall,
        );
        Ok((t, record))
    }
}

enum ConstrainedOutcome {
    Feasible(Trajectory),
    FeasibilityFailed(RunRecord),
}

/// Random m-element subset of {1..n}, 1-based, sorted.
fn random_subset<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..=n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut out = idx[..m].to_vec();
    out.sort_unstable();
    out
}

/// Scaling-scan mode: hold the rank (nonzero count) or d0 fixed across N.
#[derive(Debug, Clone, Copy)]
pub enum ScalingMode {
    FixedRank(usize),
    FixedD0(usize),
}

#[derive(Debug, Clone)]
pub struct DegeneracyReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub spearman_tau_dim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralSetSummary {
    pub n: usize,
    pub rho_index: usize,
    pub set_index: usize,
    pub n_b: usize,
    pub restarts: usize,
    pub feasibility_failures: usize,
    pub j_best: f64,
    pub j_worst: f64,
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct ConstrainedGeneralReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<GeneralSetSummary>,
}

impl ConstrainedGeneralReport {
    pub fn max_spread(&self) -> f64 {
        self.summaries
            .iter()
            .map(|s| s.spread)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ElementFixingSummary {
    pub n: usize,
    pub set_size: usize,
    pub runs: usize,
    pub feasibility_failures: usize,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct ElementFixingReport {
    pub records: Vec<RunRecord>,
    pub configs: Vec<ElementFixingSummary>,
}

impl ElementFixingReport {
    pub fn max_abs_deviation(&self) -> f64 {
        self.configs
            .iter()
            .map(|c| c.max_abs_deviation)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_helpers() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935).abs() < 1e-6);
        // Perfect monotone relation, with ties handled.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
        let y_rev = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &y_rev) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn objective_distribution_mean_tracks_inverse_n() {
        let h = Harness::new(101);
        for n in [2usize, 5] {
            let d = h.objective_distribution(n, 400).unwrap();
            assert!((d.mean - 1.0 / n as f64).abs() < 4.0 * d.std / (400f64).sqrt() + 0.01);
            assert_eq!(d.bins.iter().sum::<u64>(), 400);
        }
    }

    #[test]
    fn trap_scan_small_converges() {
        let h = Harness::new(102);
        let records = h.trap_scan(3, 4).unwrap();
        assert_eq!(records.len(), 12);
        assert!(records.iter().all(|r| r.converged && r.j_final > 0.99));
        let agg = aggregate(&records);
        assert!(agg.iter().all(|a| a.convergence_rate == 1.0));
        // Pure (d0 = 2) is its own group; mixed and maximally mixed share d0 = 0.
        assert_eq!(agg.len(), 2);
        assert_eq!(agg.iter().map(|a| a.count).sum::<usize>(), 12);
    }

    #[test]
    fn scaling_modes_validate() {
        let h = Harness::new(103);
        assert!(h.scaling(&[2, 3], ScalingMode::FixedRank(1), 2).is_ok());
        assert!(h.scaling(&[2], ScalingMode::FixedD0(2), 2).is_err());
        assert!(h.scaling(&[3], ScalingMode::FixedRank(4), 2).is_err());
    }

    #[test]
    fn degeneracy_grid_shape_and_dim_column() {
        let h = Harness::new(104);
        let report = h.degeneracy(3, 2).unwrap();
        assert_eq!(report.records.len(), 3 * 3 * 2);
        assert_eq!(report.aggregates.len(), 9);
        for row in &report.aggregates {
            assert_eq!(
                row.dim.unwrap(),
                dim_max_manifold(row.n, row.d0, row.e1).unwrap()
            );
        }
        // The full-degeneracy cell has J = 1 from the start.
        let trivial = report
            .aggregates
            .iter()
            .find(|a| a.e1 == 3 && a.d0 == 0)
            .unwrap();
        assert_eq!(trivial.median_tau, 0.0);
    }

    #[test]
    fn compare_unitary_is_paired() {
        let h = Harness::new(105);
        let records = h.compare_unitary(&[3], 3, &[RhoKind::Mixed]).unwrap();
        assert_eq!(records.len(), 6);
        for pair in records.chunks(2) {
            assert_eq!(pair[0].seed, pair[1].seed);
            assert_eq!(pair[0].control_kind, ControlKind::Kraus);
            assert_eq!(pair[1].control_kind, ControlKind::Unitary);
            assert!(pair[0].converged && pair[1].converged);
        }
    }

    #[test]
    fn element_fixing_protocol_matches_analytic() {
        let h = Harness::new(106);
        let report = h.constrained_element_fixing(&[3], 3).unwrap();
        assert!(report.max_abs_deviation() <= 0.01);
        assert!(report.configs.iter().all(|c| c.feasibility_failures == 0));
    }

    #[test]
    fn general_protocol_spread_is_small() {
        let h = Harness::new(107);
        let report = h.constrained_general(&[2], 1, 2, 3).unwrap();
        assert!(report.max_spread() <= 0.02, "spread {}", report.max_spread());
        assert_eq!(report.records.len(), 6);
    }

    #[test]
    fn harness_is_deterministic() {
        let h = Harness::new(108);
        let a = h.trap_scan(2, 3).unwrap();
        let b = h.trap_scan(2, 3).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.tau, y.tau);
            assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
            assert_eq!(x.j_final.to_bits(), y.j_final.to_bits());
        }
    }

    #[test]
    fn rho_theta_kind_parsing() {
        assert_eq!(RhoKind::parse("pure").unwrap(), RhoKind::Pure);
        assert_eq!(RhoKind::parse("rank:3").unwrap(), RhoKind::Rank(3));
        assert!(RhoKind::parse("bogus").is_err());
        assert_eq!(
            ThetaKind::parse("degenerate:2").unwrap(),
            ThetaKind::Degenerate(2)
        );
        assert!(ThetaKind::parse("x").is_err());
    }
}
