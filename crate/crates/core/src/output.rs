//! Output files: `timeseries.csv`, `summary.json` and `snapshot_<t>.csv`.
//!
//! All floats are written with Rust's shortest round-trip formatting, so
//! reading a value back yields the identical `f64`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{choose_b, fit_decay_rate, BChoice, BMode, DecayFit, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{EquilibriumInfo, FieldState, Grid, ModelParams, StabilityMargin};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Relative mass drift above which a record counts as a conservation failure.
pub const MASS_DRIFT_TOL: f64 = 1e-10;
/// Scaled tolerance on the nutrient bound slack.
pub const W_BOUND_TOL: f64 = 1e-8;
/// Scaled tolerance on the Csiszár–Kullback slack.
pub const CK_TOL: f64 = 1e-12;
/// Absolute part of the discrete energy-dissipation tolerance `1e-3 (1 + D)`.
pub const ENERGY_TOL: f64 = 1e-3;
/// Deviations at or below this multiple of the mean are roundoff, not signal.
pub const DEVIATION_NOISE_FLOOR: f64 = 1e-12;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Writes one CSV row per record under the fixed header.
pub fn write_timeseries(trajectory: &Trajectory, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(TIMESERIES_FILE);
    write_file(&path, |out| {
        writeln!(out, "{}", DiagnosticsRecord::CSV_HEADER.join(","))?;
        for record in &trajectory.records {
            writeln!(out, "{}", record.csv_fields().join(","))?;
        }
        Ok(())
    })?;
    Ok(path)
}

pub fn snapshot_file_name(t: f64) -> String {
    format!("snapshot_{t:?}.csv")
}

/// Writes `x,u,v,w` for one state.
pub fn write_snapshot(state: &FieldState, grid: &Grid, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(snapshot_file_name(state.t));
    write_file(&path, |out| {
        writeln!(out, "x,u,v,w")?;
        for (i, x) in grid.centers().enumerate() {
            writeln!(out, "{x:?},{:?},{:?},{:?}", state.u[i], state.v[i], state.w[i])?;
        }
        Ok(())
    })?;
    Ok(path)
}

/// Outcome of the discrete dissipation test on the tail of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyTailReport {
    pub window_start: f64,
    pub b: f64,
    pub b_lower: f64,
    pub b_upper: f64,
    pub feasible: bool,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `F / D` over tail records with `D > 0`.
    pub max_energy_ratio: f64,
}

impl EnergyTailReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.violations as f64 / self.pairs as f64
        }
    }
}

/// Checks `(F(t + dt) - F(t)) / dt <= -D(t) + 1e-3 (1 + D(t))` over the last
/// `tail_fraction` of the record times, with `b` chosen from the tail's
/// sup-norms.
pub fn energy_tail_check(
    records: &[DiagnosticsRecord],
    params: &ModelParams,
    tail_fraction: f64,
) -> Result<EnergyTailReport> {
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Err(Error::InsufficientData("no records".into()));
    };
    let start = last.t - tail_fraction * (last.t - first.t);
    let tail: Vec<&DiagnosticsRecord> = records.iter().filter(|r| r.t >= start).collect();
    let sup = |f: fn(&DiagnosticsRecord) -> f64| tail.iter().map(|r| f(r)).fold(0.0f64, f64::max);
    let choice: BChoice = choose_b(
        params,
        sup(|r| r.max_u),
        sup(|r| r.max_v),
        sup(|r| r.max_w),
        BMode::AutoGeometricMean,
    )?;
    let b = choice.b;
    let mut violations = 0;
    for pair in tail.windows(2) {
        let (now, next) = (pair[0], pair[1]);
        let quotient = (next.energy_with_b(b, params) - now.energy_with_b(b, params)) / (next.t - now.t);
        let d = now.dissipation_with_b(b, params);
        if quotient > -d + ENERGY_TOL * (1.0 + d) {
            violations += 1;
        }
    }
    let max_energy_ratio = tail
        .iter()
        .filter_map(|r| {
            let d = r.dissipation_with_b(b, params);
            (d > 0.0).then(|| r.energy_with_b(b, params) / d)
        })
        .fold(0.0f64, f64::max);
    Ok(EnergyTailReport {
        window_start: start,
        b,
        b_lower: choice.lower,
        b_upper: choice.upper,
        feasible: choice.feasible,
        pairs: tail.len().saturating_sub(1),
        violations,
        max_energy_ratio,
    })
}

/// Exponential fit of `||u - ubar0||_inf` over the tail of the records that
/// lie above the roundoff floor `DEVIATION_NOISE_FLOOR * max(1, ubar0)`.
pub fn deviation_decay_fit(records: &[DiagnosticsRecord], ubar0: f64, tail_fraction: f64) -> Result<DecayFit> {
    let floor = DEVIATION_NOISE_FLOOR * ubar0.max(1.0);
    let series: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.t, r.linf_dev_u))
        .filter(|&(_, v)| v > floor)
        .collect();
    fit_decay_rate(&series, tail_fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ViolationCounts {
    pub negative_density: usize,
    pub nonpositive_w: usize,
    pub w_bound: usize,
    pub mass_drift: usize,
    pub csiszar_kullback: usize,
    pub energy_dissipation: usize,
}

impl ViolationCounts {
    pub fn from_records(records: &[DiagnosticsRecord], params: &ModelParams, w0_max: f64) -> Self {
        let mut counts = ViolationCounts::default();
        let Some(first) = records.first() else {
            return counts;
        };
        let (mass_u0, mass_v0) = (first.mass_u, first.mass_v);
        let w_scale = params.r / params.mu + w0_max;
        for r in records {
            counts.negative_density += usize::from(r.min_u < 0.0 || r.min_v < 0.0);
            counts.nonpositive_w += usize::from(r.min_w <= 0.0);
            counts.w_bound += usize::from(r.w_bound_slack < -W_BOUND_TOL * w_scale);
            let drift_u = (r.mass_u - mass_u0).abs() / mass_u0;
            let drift_v = (r.mass_v - mass_v0).abs() / mass_v0;
            counts.mass_drift += usize::from(drift_u > MASS_DRIFT_TOL || drift_v > MASS_DRIFT_TOL);
            let ck = |slack: f64, l1: f64| slack < -CK_TOL * (1.0 + l1 * l1);
            counts.csiszar_kullback += usize::from(ck(r.ck_slack_u, r.l1_dev_u) || ck(r.ck_slack_v, r.l1_dev_v));
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalDeviations {
    pub linf_u: f64,
    pub linf_v: f64,
    pub linf_w: f64,
    pub l1_u: f64,
    pub l1_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BFeasibility {
    pub feasible_records: usize,
    pub total_records: usize,
}

/// Contents of `summary.json`; field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub termination: &'static str,
    pub converged: bool,
    pub message: Option<String>,
    pub t_final: f64,
    pub steps: usize,
    pub records: usize,
    pub ubar0: f64,
    pub vbar0: f64,
    pub wstar: f64,
    pub final_deviations: Option<FinalDeviations>,
    pub decay_fit: Option<DecayFit>,
    pub decay_fit_error: Option<String>,
    pub stability: Option<StabilityMargin>,
    pub stability_error: Option<String>,
    pub b_feasibility: BFeasibility,
    pub energy_tail: Option<EnergyTailReport>,
    pub violations: ViolationCounts,
}

pub const SUMMARY_FIELDS: [&str; 17] = [
    "termination",
    "converged",
    "message",
    "t_final",
    "steps",
    "records",
    "ubar0",
    "vbar0",
    "wstar",
    "final_deviations",
    "decay_fit",
    "decay_fit_error",
    "stability",
    "stability_error",
    "b_feasibility",
    "energy_tail",
    "violations",
];

impl Summary {
    pub fn build(
        trajectory: &Trajectory,
        fit: Result<DecayFit>,
        equilibrium: &EquilibriumInfo,
        margin: Result<StabilityMargin>,
        params: &ModelParams,
        tail_fraction: f64,
    ) -> Self {
        let records = &trajectory.records;
        let energy_tail = energy_tail_check(records, params, tail_fraction).ok();
        let mut violations = ViolationCounts::from_records(records, params, trajectory.w0_max);
        violations.energy_dissipation = energy_tail.map_or(0, |e| e.violations);
        let (decay_fit, decay_fit_error) = split(fit);
        let (stability, stability_error) = split(margin);
        Summary {
            termination: trajectory.termination.label(),
            converged: trajectory.converged(),
            message: match &trajectory.termination {
                crate::integrator::Termination::Failed { message, .. } => Some(message.clone()),
                _ => None,
            },
            t_final: trajectory.final_state.t,
            steps: trajectory.steps,
            records: records.len(),
            ubar0: equilibrium.ubar0,
            vbar0: equilibrium.vbar0,
            wstar: equilibrium.wstar,
            final_deviations: records.last().map(|r| FinalDeviations {
                linf_u: r.linf_dev_u,
                linf_v: r.linf_dev_v,
                linf_w: r.linf_dev_w,
                l1_u: r.l1_dev_u,
                l1_v: r.l1_dev_v,
            }),
            decay_fit,
            decay_fit_error,
            stability,
            stability_error,
            b_feasibility: BFeasibility {
                feasible_records: records.iter().filter(|r| r.b_feasible).count(),
                total_records: records.len(),
            },
            energy_tail,
            violations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn split<T>(r: Result<T>) -> (Option<T>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Writes `summary.json` for a finished run.
pub fn write_summary(
    trajectory: &Trajectory,
    fit: Result<DecayFit>,
    equilibrium: &EquilibriumInfo,
    margin: Result<StabilityMargin>,
    params: &ModelParams,
    tail_fraction: f64,
    dir: &Path,
) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(SUMMARY_FILE);
    let summary = Summary::build(trajectory, fit, equilibrium, margin, params, tail_fraction);
    let text = summary.to_json();
    write_file(&path, |out| writeln!(out, "{text}"))?;
    Ok(path)
}
