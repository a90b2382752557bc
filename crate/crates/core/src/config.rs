//! TOML run configuration.
//!
//! ```toml
//! [domain]
//! length = 1.0
//! n = 128
//!
//! [params]
//! chi1 = 1.0
//! chi2 = 1.0
//! d = 1.0
//! lambda = 1.0
//! mu = 1.0
//! r = 1.0
//!
//! [init]
//! u = { kind = "constant_plus_cosine", base = 0.99, amplitude = 0.01, mode = 1 }
//! v = { kind = "constant", value = 0.01 }
//! w = { kind = "gaussian_bump", center = 0.5, width = 0.1, height = 0.2, baseline = 0.5 }
//!
//! [time]
//! t_end = 50.0
//! # safety = 0.9, dt_max = 0.01, output_every = 0.1, snapshot_times = []
//!
//! [diagnostics]
//! # b_mode = "auto" | "fixed" (with b_value), tail_fraction = 0.5, steady_tol = 1e-9
//!
//! [output]
//! dir = "out"
//! write_snapshots = false
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{BMode, EnergyConfig};
use crate::error::{Error, Result};
use crate::integrator::{StepControl, DEFAULT_STEADY_TOL};
use crate::model::{FieldInit, Grid, InitialCondition, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub length: f64,
    pub n: usize,
}

fn default_safety() -> f64 {
    0.9
}
fn default_dt_max() -> f64 {
    1e-2
}
fn default_output_every() -> f64 {
    0.1
}
fn default_tail_fraction() -> f64 {
    0.5
}
fn default_steady_tol() -> f64 {
    DEFAULT_STEADY_TOL
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_output_every")]
    pub output_every: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BModeName {
    #[default]
    Auto,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default)]
    pub b_mode: BModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_value: Option<f64>,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_steady_tol")]
    pub steady_tol: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            b_mode: BModeName::Auto,
            b_value: None,
            tail_fraction: default_tail_fraction(),
            steady_tol: default_steady_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub write_snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_output_dir(),
            write_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub domain: DomainSection,
    pub params: ModelParams,
    pub init: InitialCondition,
    pub time: TimeSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl SimConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.domain.n, self.domain.length)
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            safety: self.time.safety,
            dt_max: self.time.dt_max,
            t_end: self.time.t_end,
            output_every: self.time.output_every,
            steady_tol: self.diagnostics.steady_tol,
            snapshot_times: self.time.snapshot_times.clone(),
        }
    }

    pub fn energy_config(&self) -> EnergyConfig {
        let b_mode = match self.diagnostics.b_mode {
            BModeName::Auto => BMode::AutoGeometricMean,
            BModeName::Fixed => BMode::Fixed(self.diagnostics.b_value.unwrap_or(f64::NAN)),
        };
        EnergyConfig {
            b_mode,
            tail_fraction: self.diagnostics.tail_fraction,
            ..EnergyConfig::default()
        }
    }

    /// Range checks on every section.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.params.validate()?;
        self.step_control().validate()?;
        if self.diagnostics.b_mode == BModeName::Fixed && self.diagnostics.b_value.is_none() {
            return Err(Error::invalid(
                "diagnostics.b_value",
                "required when b_mode = \"fixed\"",
            ));
        }
        self.energy_config().validate()?;
        for (name, init) in [
            ("init.u", &self.init.u),
            ("init.v", &self.init.v),
            ("init.w", &self.init.w),
        ] {
            if let FieldInit::GaussianBump { width, .. } = init {
                if !(*width > 0.0) {
                    return Err(Error::invalid(
                        format!("{name}.width"),
                        format!("must be positive, got {width}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Makes relative `from_file` paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for init in [&mut self.init.u, &mut self.init.v, &mut self.init.w] {
            if let FieldInit::FromFile { path, .. } = init {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Line (1-based) of `key` inside `[section]` (or a dotted sub-table), if any.
pub(crate) fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let key = parts.pop()?;
    let section = parts.join(".");
    let mut current = String::new();
    let mut fallback = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        if lhs.trim() != key {
            continue;
        }
        if current == section {
            return Some(idx + 1);
        }
        fallback.get_or_insert(idx + 1);
    }
    fallback
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let config: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    config.validate().map_err(|e| match e {
        Error::Invalid { what, reason } => {
            let anchor = locate_key(text, &what).map_or(String::new(), |l| format!("line {l}: "));
            Error::Config(format!("{anchor}{what}: {reason}"))
        }
        other => other,
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    Ok(config)
}
