//! Replicate orchestration and deterministic output emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ConfigError, ExperimentConfig, PolicyKind};
use crate::geometry::{self, AffineSubspace};
use crate::linalg::op_norm;
use crate::policies::{
    stabilizing_initial_estimate, AdaptivePolicy, BoundaryRecord, OptimalPolicy,
};
use crate::regret::{
    compute_regret, decompose, log_spaced, normalized_curves, NormalizedPoint, ReferenceSolution,
};
use crate::system::{simulate_coupled, CostSpec, DynamicsParameter, Trajectory};

/// SplitMix64 mixing step, used to derive decorrelated per-replicate seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seed for replicate `k`: the base xor a SplitMix64 stream value.
pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    base ^ splitmix64(replicate as u64)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompRow {
    pub n: usize,
    pub regret: f64,
    pub chi: f64,
    pub rho: f64,
    pub z_n: f64,
    pub s_n: f64,
    pub t_n: f64,
    pub identity_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationRow {
    pub n: usize,
    pub est_error: f64,
    pub norm_est_error: f64,
    pub p0_distance: f64,
    pub gce_norm_error: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub final_regret: f64,
    pub curves: Vec<NormalizedPoint>,
    pub estimation: Vec<EstimationRow>,
    pub decomposition: Vec<DecompRow>,
    pub fallback_boundaries: usize,
    /// Kept only when the config asks for trajectory emission.
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub median_norm_regret: f64,
    pub min_norm_regret: f64,
    pub max_norm_regret: f64,
    pub median_norm_error: f64,
    pub median_gce_norm_regret: f64,
    pub median_gce_norm_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateStatus {
    pub index: usize,
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_regret: f64,
    pub fallback_boundaries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub replicates: Vec<ReplicateStatus>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug)]
pub struct RunRecord {
    pub config_hash: String,
    pub outcomes: Vec<ReplicateOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// The output directory, honoring the `ALQR_OUTPUT_DIR` override.
pub fn effective_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("ALQR_OUTPUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.run.output_dir.clone(),
    }
}

/// Simulate all replicates of the configured experiment (in parallel,
/// keyed by replicate index) without touching the filesystem.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, ConfigError> {
    config.validate()?;
    let (theta0, cost) = config.build_system()?;
    let reference = ReferenceSolution::new(&theta0, &cost)
        .map_err(|e| ConfigError::Invalid(format!("configured plant is not stabilizable: {e}")))?;
    let side = config.build_side(&theta0, &cost)?;
    if config.policy.kind == PolicyKind::Gce {
        if let Some(s) = &side {
            if !s.contains(&theta0.as_matrix(), 1e-9) {
                return Err(ConfigError::Invalid(
                    "the true parameter does not satisfy the side information".into(),
                ));
            }
        }
    }
    let p0 = geometry::construct_p0(&theta0, &cost)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let x0 = match &config.run.x0 {
        Some(v) => {
            if v.len() != theta0.state_dim() {
                return Err(ConfigError::Invalid("x0 length mismatch".into()));
            }
            DVector::from_vec(v.clone())
        }
        None => DVector::zeros(theta0.state_dim()),
    };
    let horizon = config.run.horizon;
    let curve_grid = log_spaced(2.max(horizon.min(10)), horizon, 24);
    let decomp_grid = log_spaced(2.max(horizon.min(10)), horizon, 3);

    let outcomes: Vec<ReplicateOutcome> = (0..config.run.replicates)
        .into_par_iter()
        .map(|k| {
            run_replicate(
                config,
                k,
                &theta0,
                &cost,
                &reference,
                &p0,
                side.as_ref(),
                &x0,
                &curve_grid,
                &decomp_grid,
            )
        })
        .collect();

    let summary = summarize(&outcomes, &curve_grid);
    let config_hash = format!("{:016x}", fnv1a(config.canonical_string().as_bytes()));
    Ok(RunRecord { config_hash, outcomes, summary })
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    config: &ExperimentConfig,
    index: usize,
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    reference: &ReferenceSolution,
    p0: &AffineSubspace,
    side: Option<&crate::geometry::SideInformation>,
    x0: &DVector<f64>,
    curve_grid: &[usize],
    decomp_grid: &[usize],
) -> ReplicateOutcome {
    let seed = replicate_seed(config.run.base_seed, index);
    let mut outcome = ReplicateOutcome {
        index,
        seed,
        error: None,
        final_regret: f64::NAN,
        curves: Vec::new(),
        estimation: Vec::new(),
        decomposition: Vec::new(),
        fallback_boundaries: 0,
        trajectory: None,
    };
    let noise = match config.build_noise(theta0.state_dim(), splitmix64(seed ^ 1)) {
        Ok(m) => m,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    let noises = match noise.draw(config.run.horizon) {
        Ok(n) => n,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    let mut optimal = match OptimalPolicy::new(theta0, cost) {
        Ok(p) => p,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };

    enum Built {
        Fixed(OptimalPolicy),
        Adaptive(Box<AdaptivePolicy>),
    }
    let built = if config.policy.kind == PolicyKind::Optimal {
        Built::Fixed(optimal.clone())
    } else {
        let init = match stabilizing_initial_estimate(theta0, cost, splitmix64(seed ^ 2)) {
            Ok(i) => i,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        let sched = match crate::estimation::EpisodeSchedule::new(config.run.gamma) {
            Ok(s) => s,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        let policy_seed = splitmix64(seed ^ 3);
        let policy = match config.policy.kind {
            PolicyKind::Ce => AdaptivePolicy::ce(sched, init, cost.clone()),
            PolicyKind::Rce => {
                AdaptivePolicy::rce(sched, config.policy.sigma0, init, cost.clone(), policy_seed)
            }
            PolicyKind::Ts => {
                let q = theta0.combined_dim();
                let prior = DMatrix::identity(q, q) * config.policy.prior_scale;
                AdaptivePolicy::ts(sched, prior, init, cost.clone(), policy_seed)
            }
            PolicyKind::Gce => {
                let side = side.expect("validated: gce has side information").clone();
                AdaptivePolicy::gce(
                    sched,
                    side,
                    config.policy.c_lambda,
                    init,
                    cost.clone(),
                    policy_seed,
                )
            }
            PolicyKind::Optimal => unreachable!(),
        };
        match policy {
            Ok(p) => Built::Adaptive(Box::new(p)),
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        }
    };

    let (traj, opt_traj, boundary_log, initial_estimate) = match built {
        Built::Fixed(mut policy) => {
            let (t, o) = simulate_coupled(theta0, cost, &mut policy, &mut optimal, &noises, x0);
            (t, o, Vec::new(), None)
        }
        Built::Adaptive(mut policy) => {
            let (t, o) =
                simulate_coupled(theta0, cost, policy.as_mut(), &mut optimal, &noises, x0);
            let log = policy.boundary_log().to_vec();
            let init = policy.initial_estimate().clone();
            (t, o, log, Some(init))
        }
    };

    if traj.diverged || opt_traj.diverged {
        outcome.error = Some(format!(
            "trajectory diverged at step {} (state norm exceeded the cap)",
            traj.horizon().min(opt_traj.horizon())
        ));
        return outcome;
    }

    outcome.fallback_boundaries = boundary_log.iter().filter(|r| r.fell_back).count();

    let ledger = match compute_regret(&traj, &opt_traj, reference) {
        Ok(l) => l,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.final_regret = ledger.final_regret();

    let (err_series, p0_series) =
        estimation_error_series(theta0, p0, initial_estimate.as_ref(), &boundary_log, traj.horizon());
    outcome.curves = normalized_curves(&ledger, &err_series, curve_grid);
    outcome.estimation = curve_grid
        .iter()
        .filter(|&&n| n >= 2 && n <= traj.horizon())
        .map(|&n| {
            let nf = n as f64;
            let e = err_series[n];
            let d = p0_series[n];
            EstimationRow {
                n,
                est_error: e,
                norm_est_error: e * nf.powf(0.25) / nf.ln().sqrt(),
                p0_distance: d,
                gce_norm_error: nf * d * d / nf.ln(),
            }
        })
        .collect();

    for &n in decomp_grid {
        if n > traj.horizon() {
            continue;
        }
        let sub = traj.truncated(n);
        match decompose(&sub, reference) {
            Ok(terms) => {
                let r = ledger.regret[n];
                outcome.decomposition.push(DecompRow {
                    n,
                    regret: r,
                    chi: ledger.chi[n],
                    rho: ledger.rho[n],
                    z_n: terms.z_n,
                    s_n: terms.s_n,
                    t_n: terms.t_n,
                    identity_gap: (r - terms.total()).abs() / (1.0 + r.abs()),
                });
            }
            Err(e) => {
                outcome.error = Some(e.to_string());
                break;
            }
        }
    }

    if config.run.emit_trajectory && index == 0 {
        outcome.trajectory = Some(traj);
    }
    outcome
}

/// Step-function series of the estimation error: entry `n` holds the
/// operator-norm distance of the estimate in force at time `n` from the
/// truth, and from the asymptotic uncertainty set.
fn estimation_error_series(
    theta0: &DynamicsParameter,
    p0: &AffineSubspace,
    initial: Option<&DynamicsParameter>,
    boundary_log: &[BoundaryRecord],
    horizon: usize,
) -> (Vec<f64>, Vec<f64>) {
    let truth = theta0.as_matrix();
    let mut err = vec![0.0; horizon + 1];
    let mut dist = vec![0.0; horizon + 1];
    let Some(initial) = initial else {
        return (err, dist);
    };
    let mut cur_err = op_norm(&(initial.as_matrix() - &truth));
    let mut cur_dist = p0.op_distance(&initial.as_matrix());
    let mut next_boundary = 0usize;
    for (n, (e, d)) in err.iter_mut().zip(dist.iter_mut()).enumerate() {
        while next_boundary < boundary_log.len() && boundary_log[next_boundary].n == n {
            let est = boundary_log[next_boundary].estimate.as_matrix();
            cur_err = op_norm(&(&est - &truth));
            cur_dist = p0.op_distance(&est);
            next_boundary += 1;
        }
        *e = cur_err;
        *d = cur_dist;
    }
    (err, dist)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn summarize(outcomes: &[ReplicateOutcome], grid: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &n in grid {
        let mut nr = Vec::new();
        let mut ne = Vec::new();
        let mut gr = Vec::new();
        let mut ge = Vec::new();
        for o in outcomes.iter().filter(|o| o.error.is_none()) {
            if let Some(p) = o.curves.iter().find(|p| p.n == n) {
                nr.push(p.norm_regret);
                ne.push(p.norm_error);
                gr.push(p.gce_norm_regret);
                ge.push(p.gce_norm_error);
            }
        }
        if nr.is_empty() {
            continue;
        }
        let min = nr.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = nr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.push(SummaryRow {
            n,
            median_norm_regret: median(&mut nr),
            min_norm_regret: min,
            max_norm_regret: max,
            median_norm_error: median(&mut ne),
            median_gce_norm_regret: median(&mut gr),
            median_gce_norm_error: median(&mut ge),
        });
    }
    rows
}

/// Median curve (across successful replicates) of one normalized statistic.
pub fn median_curve(
    record: &RunRecord,
    pick: impl Fn(&NormalizedPoint) -> f64,
) -> Vec<(usize, f64)> {
    let mut by_n: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    for o in record.outcomes.iter().filter(|o| o.error.is_none()) {
        for p in &o.curves {
            by_n.entry(p.n).or_default().push(pick(p));
        }
    }
    by_n.into_iter().map(|(n, mut vs)| (n, median(&mut vs))).collect()
}

/// Write the experiment outputs (CSVs, summary JSON, plot script) under
/// `dir`. Rerunning the same config with the same seeds produces
/// byte-identical files.
pub fn write_outputs(record: &RunRecord, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut regret = std::fs::File::create(dir.join("regret.csv"))?;
    writeln!(regret, "replicate,n,regret,chi,rho,norm_regret,gce_norm_regret")?;
    for o in &record.outcomes {
        for p in &o.curves {
            writeln!(
                regret,
                "{},{},{},{},{},{},{}",
                o.index, p.n, p.regret, p.chi, p.rho, p.norm_regret, p.gce_norm_regret
            )?;
        }
    }

    let mut estimation = std::fs::File::create(dir.join("estimation.csv"))?;
    writeln!(estimation, "replicate,n,est_error,norm_est_error,p0_distance,gce_norm_error")?;
    for o in &record.outcomes {
        for row in &o.estimation {
            writeln!(
                estimation,
                "{},{},{},{},{},{}",
                o.index, row.n, row.est_error, row.norm_est_error, row.p0_distance,
                row.gce_norm_error
            )?;
        }
    }

    let mut decomp = std::fs::File::create(dir.join("decomposition.csv"))?;
    writeln!(decomp, "replicate,n,regret,chi,rho,z_n,s_n,t_n,identity_gap")?;
    for o in &record.outcomes {
        for row in &o.decomposition {
            writeln!(
                decomp,
                "{},{},{},{},{},{},{},{},{}",
                o.index,
                row.n,
                row.regret,
                row.chi,
                row.rho,
                row.z_n,
                row.s_n,
                row.t_n,
                row.identity_gap
            )?;
        }
    }

    let summary = RunSummary {
        config_hash: record.config_hash.clone(),
        replicates: record
            .outcomes
            .iter()
            .map(|o| ReplicateStatus {
                index: o.index,
                seed: o.seed,
                ok: o.error.is_none(),
                error: o.error.clone(),
                final_regret: o.final_regret,
                fallback_boundaries: o.fallback_boundaries,
            })
            .collect(),
        summary: record.summary.clone(),
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    for o in &record.outcomes {
        if let Some(traj) = &o.trajectory {
            let file = std::fs::File::create(dir.join(format!("trajectory_rep{}.csv", o.index)))?;
            traj.write_csv(std::io::BufWriter::new(file))?;
            if let Some(gains) = &traj.gains {
                let file = std::fs::File::create(dir.join(format!("gains_rep{}.csv", o.index)))?;
                write_gains_csv(gains, std::io::BufWriter::new(file))?;
            }
        }
    }

    std::fs::write(dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(())
}

/// Gains CSV: header `t,l_11..l_rp` (row-major entries of the applied gain).
pub fn write_gains_csv<W: Write>(gains: &[DMatrix<f64>], mut w: W) -> std::io::Result<()> {
    let (r, p) = gains.first().map_or((0, 0), |g| (g.nrows(), g.ncols()));
    let mut header = vec!["t".to_string()];
    for i in 1..=r {
        for j in 1..=p {
            header.push(format!("l_{i}{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, g) in gains.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for i in 0..r {
            for j in 0..p {
                row.push(format!("{}", g[(i, j)]));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parse a gains CSV written by [`write_gains_csv`] for a given gain shape.
pub fn read_gains_csv<R: std::io::BufRead>(
    reader: R,
    input_dim: usize,
    state_dim: usize,
) -> Result<Vec<DMatrix<f64>>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + input_dim * state_dim {
            return Err(format!(
                "row {i}: expected {} fields, got {}",
                1 + input_dim * state_dim,
                fields.len()
            ));
        }
        let mut g = DMatrix::zeros(input_dim, state_dim);
        for r in 0..input_dim {
            for c in 0..state_dim {
                g[(r, c)] = fields[1 + r * state_dim + c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {i}: {e}"))?;
            }
        }
        out.push(g);
    }
    Ok(out)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot the normalized regret/estimation curves emitted next to this script."""
import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    rows = defaultdict(list)
    with open(os.path.join(HERE, name)) as fh:
        for row in csv.DictReader(fh):
            rows[int(row["replicate"])].append(row)
    return rows


def panel(ax, rows, key, label):
    for rep in sorted(rows):
        ns = [int(r["n"]) for r in rows[rep]]
        vs = [float(r[key]) for r in rows[rep]]
        ax.plot(ns, vs, lw=1, label=f"replicate {rep}")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(label)
    ax.grid(True, which="both", alpha=0.3)


regret = load("regret.csv")
estimation = load("estimation.csv")
fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 8))
panel(top, regret, "norm_regret", "regret / (sqrt(n) log n)")
panel(bottom, estimation, "norm_est_error", "error * n^(1/4) / log^(1/2) n")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "curves.png"), dpi=150)

decomp = load("decomposition.csv")
fig2, ax = plt.subplots(figsize=(7, 4))
panel(ax, decomp, "identity_gap", "|R - (Z+S+T)| / (1+|R|)")
ax.set_yscale("log")
fig2.tight_layout()
fig2.savefig(os.path.join(HERE, "decomposition.png"), dpi=150)
print("wrote curves.png and decomposition.png")
"#;
