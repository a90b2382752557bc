//! Parameter sweeps over one or two axes, with one summary row per point.
//!
//! ```toml
//! base = "base.toml"        # a run configuration, relative to this file
//! total_mean = 1.0          # optional: with a vbar0 axis alone, ubar0 = total_mean - vbar0
//!
//! [[axes]]
//! name = "chi2"
//! values = [1.0, 10.0, 100.0]
//!
//! [[axes]]
//! name = "vbar0"
//! values = [0.01, 0.1, 0.5]
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, SimConfig};
use crate::error::{Error, Result};
use crate::integrator::run_from_state;
use crate::model::{init_state, mass_and_mean, stability_margin, FieldState, Grid};
use crate::output::{deviation_decay_fit, energy_tail_check};

/// Environment variable selecting the number of sweep workers.
pub const WORKERS_ENV: &str = "FORAGER_SIM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    Chi2,
    Ubar0,
    Vbar0,
    R,
    Lambda,
}

impl AxisName {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::Chi2 => "chi2",
            AxisName::Ubar0 => "ubar0",
            AxisName::Vbar0 => "vbar0",
            AxisName::R => "r",
            AxisName::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: PathBuf,
    #[serde(default)]
    total_mean: Option<f64>,
    axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub axes: Vec<Axis>,
    pub total_mean: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::invalid(
                "axes",
                format!("need one or two axes, got {}", self.axes.len()),
            ));
        }
        if self.axes.len() == 2 && self.axes[0].name == self.axes[1].name {
            return Err(Error::invalid("axes", "the two axes must differ"));
        }
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(Error::invalid(format!("axes.{}", axis.name.as_str()), "no values"));
            }
            let ok = |v: f64| match axis.name {
                AxisName::R => v >= 0.0 && v.is_finite(),
                _ => v > 0.0 && v.is_finite(),
            };
            if let Some(v) = axis.values.iter().find(|v| !ok(**v)) {
                return Err(Error::invalid(
                    format!("axes.{}", axis.name.as_str()),
                    format!("value {v} outside the admissible range"),
                ));
            }
        }
        if let Some(total) = self.total_mean {
            let vbar = self.axes.iter().find(|a| a.name == AxisName::Vbar0);
            let has_ubar = self.axes.iter().any(|a| a.name == AxisName::Ubar0);
            match vbar {
                Some(axis) if !has_ubar => {
                    if let Some(v) = axis.values.iter().find(|v| **v >= total) {
                        return Err(Error::invalid(
                            "total_mean",
                            format!("vbar0 = {v} leaves no room for ubar0 below {total}"),
                        ));
                    }
                }
                _ => {
                    return Err(Error::invalid(
                        "total_mean",
                        "only applies to a vbar0 axis without a ubar0 axis",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Every grid point as `(axis values)`, first axis slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self.axes.as_slice() {
            [a] => a.values.iter().map(|&x| vec![x]).collect(),
            [a, b] => a
                .values
                .iter()
                .flat_map(|&x| b.values.iter().map(move |&y| vec![x, y]))
                .collect(),
            _ => Vec::new(),
        }
    }
}

pub fn parse_sweep(text: &str, base_dir: &Path) -> Result<SweepSpec> {
    let file: SweepFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    let base_path = if file.base.is_relative() {
        base_dir.join(&file.base)
    } else {
        file.base.clone()
    };
    let spec = SweepSpec {
        base: load_config(&base_path)?,
        axes: file.axes,
        total_mean: file.total_mean,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Summary of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub coords: Vec<f64>,
    pub ubar0: f64,
    pub vbar0: f64,
    pub margin: Option<f64>,
    pub normalized: bool,
    pub termination: String,
    pub converged: bool,
    pub fitted_alpha: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub final_linf_u: f64,
    pub final_linf_v: f64,
    pub final_linf_w: f64,
    pub b_feasible: bool,
    pub t_final: f64,
}

fn rescale_mean(field: &mut [f64], target: f64, grid: &Grid) {
    let (_, mean) = mass_and_mean(field, grid);
    let factor = target / mean;
    for x in field {
        *x *= factor;
    }
}

/// Runs a single point of the sweep.
pub fn run_point(spec: &SweepSpec, coords: &[f64]) -> Result<SweepPoint> {
    let mut params = spec.base.params;
    let grid = spec.base.grid()?;
    let mut state: FieldState = init_state(&spec.base.init, &grid)?;
    let (mut ubar0, mut vbar0) = (mass_and_mean(&state.u, &grid).1, mass_and_mean(&state.v, &grid).1);
    for (axis, &value) in spec.axes.iter().zip(coords) {
        match axis.name {
            AxisName::Chi2 => params.chi2 = value,
            AxisName::R => params.r = value,
            AxisName::Lambda => params.lambda = value,
            AxisName::Ubar0 => ubar0 = value,
            AxisName::Vbar0 => {
                vbar0 = value;
                if let Some(total) = spec.total_mean {
                    ubar0 = total - value;
                }
            }
        }
    }
    rescale_mean(&mut state.u, ubar0, &grid);
    rescale_mean(&mut state.v, vbar0, &grid);

    let tail = spec.base.diagnostics.tail_fraction;
    let traj = run_from_state(
        state,
        &params,
        &grid,
        &spec.base.step_control(),
        &spec.base.energy_config(),
    )?;
    let eq = traj.equilibrium;
    let margin = stability_margin(&params, eq.ubar0, eq.vbar0, &grid).ok();
    let fit = deviation_decay_fit(&traj.records, eq.ubar0, tail).ok();
    let last = traj.records.last();
    Ok(SweepPoint {
        coords: coords.to_vec(),
        ubar0: eq.ubar0,
        vbar0: eq.vbar0,
        margin: margin.map(|m| m.margin),
        normalized: margin.is_some_and(|m| m.normalized),
        termination: traj.termination.label().to_string(),
        converged: traj.converged(),
        fitted_alpha: fit.map(|f| f.alpha),
        fit_r_squared: fit.map(|f| f.r_squared),
        final_linf_u: last.map_or(f64::NAN, |r| r.linf_dev_u),
        final_linf_v: last.map_or(f64::NAN, |r| r.linf_dev_v),
        final_linf_w: last.map_or(f64::NAN, |r| r.linf_dev_w),
        b_feasible: energy_tail_check(&traj.records, &params, tail).is_ok_and(|e| e.feasible),
        t_final: traj.final_state.t,
    })
}

/// Worker count from [`WORKERS_ENV`], defaulting to one.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(WORKERS_ENV, format!("expected a positive integer, got {s:?}"))),
    }
}

/// Runs every point; results are in grid order regardless of `workers`.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let points = spec.points();
    if workers <= 1 {
        return points.iter().map(|c| run_point(spec, c)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    pool.install(|| points.par_iter().map(|c| run_point(spec, c)).collect())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:?}"))
}

pub fn sweep_header(spec: &SweepSpec) -> Vec<String> {
    let mut cols: Vec<String> = spec.axes.iter().map(|a| a.name.as_str().to_string()).collect();
    cols.extend(
        [
            "mean_u",
            "mean_v",
            "margin",
            "normalized",
            "termination",
            "converged",
            "fitted_alpha",
            "fit_r_squared",
            "final_linf_u",
            "final_linf_v",
            "final_linf_w",
            "b_feasible",
            "t_final",
        ]
        .map(String::from),
    );
    cols
}

pub fn write_sweep_report(spec: &SweepSpec, points: &[SweepPoint], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = sweep_header(spec).join(",");
    text.push('\n');
    for p in points {
        let mut cols: Vec<String> = p.coords.iter().map(|c| format!("{c:?}")).collect();
        cols.extend([
            format!("{:?}", p.ubar0),
            format!("{:?}", p.vbar0),
            opt(p.margin),
            p.normalized.to_string(),
            p.termination.clone(),
            p.converged.to_string(),
            opt(p.fitted_alpha),
            opt(p.fit_r_squared),
            format!("{:?}", p.final_linf_u),
            format!("{:?}", p.final_linf_v),
            format!("{:?}", p.final_linf_w),
            p.b_feasible.to_string(),
            format!("{:?}", p.t_final),
        ]);
        text.push_str(&cols.join(","));
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
