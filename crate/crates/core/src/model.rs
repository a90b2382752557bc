//! Model parameters, the cell-centered grid, field state and the homogeneous
//! equilibrium.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the forager–exploiter system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Forager taxis toward the nutrient.
    pub chi1: f64,
    /// Exploiter taxis toward foragers.
    pub chi2: f64,
    /// Nutrient diffusivity.
    pub d: f64,
    /// Consumption rate.
    pub lambda: f64,
    /// Nutrient decay rate.
    pub mu: f64,
    /// Nutrient supply rate.
    pub r: f64,
}

impl ModelParams {
    pub fn new(chi1: f64, chi2: f64, d: f64, lambda: f64, mu: f64, r: f64) -> Result<Self> {
        let params = ModelParams {
            chi1,
            chi2,
            d,
            lambda,
            mu,
            r,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks `chi1, chi2, d, lambda, mu > 0` and `r >= 0`.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("params.chi1", self.chi1),
            ("params.chi2", self.chi2),
            ("params.d", self.d),
            ("params.lambda", self.lambda),
            ("params.mu", self.mu),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(Error::invalid(
                "params.r",
                format!("must be nonnegative and finite, got {}", self.r),
            ));
        }
        Ok(())
    }
}

/// Uniform cell-centered mesh on `(0, length)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    length: f64,
    dx: f64,
}

impl Grid {
    pub const MIN_CELLS: usize = 4;

    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::invalid(
                "domain.n",
                format!("need at least {} cells, got {n}", Self::MIN_CELLS),
            ));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(
                "domain.length",
                format!("must be positive and finite, got {length}"),
            ));
        }
        Ok(Grid {
            n,
            length,
            dx: length / n as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Center of cell `i`, `(i + 1/2) dx`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.center(i))
    }
}

/// Builds a grid; fails for fewer than four cells or a non-positive length.
pub fn build_grid(n: usize, length: f64) -> Result<Grid> {
    Grid::new(n, length)
}

/// Cell averages of `(u, v, w)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl FieldState {
    /// Homogeneous state with the given constant values.
    pub fn homogeneous(grid: &Grid, u: f64, v: f64, w: f64) -> Self {
        let n = grid.n();
        FieldState {
            t: 0.0,
            u: vec![u; n],
            v: vec![v; n],
            w: vec![w; n],
        }
    }

    /// Checks lengths, `u, v >= -tol`, `w > 0` and finiteness.
    pub fn check(&self, grid: &Grid, tol: f64) -> Result<()> {
        for (name, field) in [("u", &self.u), ("v", &self.v), ("w", &self.w)] {
            if field.len() != grid.n() {
                return Err(Error::invalid(
                    format!("state.{name}"),
                    format!("length {} does not match grid size {}", field.len(), grid.n()),
                ));
            }
        }
        for (field, values) in [("u", &self.u), ("v", &self.v)] {
            for (cell, &value) in values.iter().enumerate() {
                if !value.is_finite() || value < -tol {
                    return Err(Error::Invariant {
                        field,
                        cell,
                        value,
                        t: self.t,
                        rule: "density must be nonnegative",
                    });
                }
            }
        }
        for (cell, &value) in self.w.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::Invariant {
                    field: "w",
                    cell,
                    value,
                    t: self.t,
                    rule: "nutrient must be positive",
                });
            }
        }
        Ok(())
    }
}

/// Recipe for one initial field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldInit {
    Constant {
        value: f64,
    },
    /// `base + amplitude * cos(mode * pi * x / L)` sampled at cell centers,
    /// with the residual discrete mean removed so the mean is `base`.
    ConstantPlusCosine {
        base: f64,
        amplitude: f64,
        mode: u32,
    },
    /// `baseline + height * exp(-(x - center)^2 / (2 width^2))`.
    GaussianBump {
        center: f64,
        width: f64,
        height: f64,
        baseline: f64,
    },
    /// Cell values read from a text file: one value per line, or a named
    /// column of a CSV file with a header row.
    FromFile {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
}

impl FieldInit {
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            FieldInit::Constant { value } => Ok(vec![*value; grid.n()]),
            FieldInit::ConstantPlusCosine { base, amplitude, mode } => {
                let k = f64::from(*mode) * PI / grid.length();
                let mut wave: Vec<f64> = grid.centers().map(|x| (k * x).cos()).collect();
                let residual = wave.iter().sum::<f64>() / grid.n() as f64;
                for c in &mut wave {
                    *c -= residual;
                }
                Ok(wave.into_iter().map(|c| base + amplitude * c).collect())
            }
            FieldInit::GaussianBump {
                center,
                width,
                height,
                baseline,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::invalid(
                        "init.gaussian_bump.width",
                        format!("must be positive, got {width}"),
                    ));
                }
                Ok(grid
                    .centers()
                    .map(|x| {
                        let z = (x - center) / width;
                        baseline + height * (-0.5 * z * z).exp()
                    })
                    .collect())
            }
            FieldInit::FromFile { path, column } => read_field_file(path, column.as_deref(), grid),
        }
    }
}

fn read_field_file(path: &PathBuf, column: Option<&str>, grid: &Grid) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let bad = |lineno: usize, msg: String| {
        Error::invalid(format!("init file {}", path.display()), format!("line {lineno}: {msg}"))
    };

    let values: Vec<f64> = match column {
        Some(name) => {
            let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
            let idx = header
                .split(',')
                .position(|h| h.trim() == name)
                .ok_or_else(|| bad(1, format!("no column named {name:?}")))?;
            lines
                .enumerate()
                .map(|(k, line)| {
                    let cell = line
                        .split(',')
                        .nth(idx)
                        .ok_or_else(|| bad(k + 2, "too few columns".into()))?;
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| bad(k + 2, format!("{cell:?}: {e}")))
                })
                .collect::<Result<_>>()?
        }
        None => lines
            .enumerate()
            .map(|(k, line)| {
                let token = line.split([',', ' ', '\t']).next().unwrap_or(line);
                token.parse::<f64>().map_err(|e| bad(k + 1, format!("{token:?}: {e}")))
            })
            .collect::<Result<_>>()?,
    };
    if values.len() != grid.n() {
        return Err(bad(0, format!("expected {} values, found {}", grid.n(), values.len())));
    }
    Ok(values)
}

/// Initial recipes for the three fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub u: FieldInit,
    pub v: FieldInit,
    pub w: FieldInit,
}

/// Samples the initial condition and checks that `u0, v0 >= 0` with positive
/// mass and `w0 > 0`.
pub fn init_state(ic: &InitialCondition, grid: &Grid) -> Result<FieldState> {
    let u = ic.u.sample(grid)?;
    let v = ic.v.sample(grid)?;
    let w = ic.w.sample(grid)?;
    for (name, field) in [("init.u", &u), ("init.v", &v)] {
        if let Some((i, x)) = field.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(
                name,
                format!("negative or non-finite value {x} in cell {i}"),
            ));
        }
        if mass_and_mean(field, grid).0 <= 0.0 {
            return Err(Error::invalid(name, "initial mass must be positive"));
        }
    }
    if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::invalid(
            "init.w",
            format!("must be positive everywhere, got {x} in cell {i}"),
        ));
    }
    Ok(FieldState { t: 0.0, u, v, w })
}

/// `(dx * sum, dx * sum / length)`.
pub fn mass_and_mean(field: &[f64], grid: &Grid) -> (f64, f64) {
    let mass = grid.dx() * field.iter().sum::<f64>();
    (mass, mass / grid.length())
}

/// Homogeneous nutrient level `r / (lambda (ubar0 + vbar0) + mu)`.
pub fn equilibrium_w(params: &ModelParams, ubar0: f64, vbar0: f64) -> f64 {
    params.r / (params.lambda * (ubar0 + vbar0) + params.mu)
}

/// Means of the initial densities together with the equilibrium nutrient level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumInfo {
    pub ubar0: f64,
    pub vbar0: f64,
    pub wstar: f64,
}

impl EquilibriumInfo {
    pub fn from_state(state: &FieldState, params: &ModelParams, grid: &Grid) -> Self {
        let ubar0 = mass_and_mean(&state.u, grid).1;
        let vbar0 = mass_and_mean(&state.v, grid).1;
        EquilibriumInfo {
            ubar0,
            vbar0,
            wstar: equilibrium_w(params, ubar0, vbar0),
        }
    }
}

/// Result of the formal homogenization criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityMargin {
    /// Left-hand side of the criterion minus `chi2`; positive predicts relaxation.
    pub margin: f64,
    /// The criterion is only stated for the unit interval with `ubar0 + vbar0 = 1`.
    pub normalized: bool,
}

pub fn stability_margin(params: &ModelParams, ubar0: f64, vbar0: f64, grid: &Grid) -> Result<StabilityMargin> {
    if !(params.r > 0.0) {
        return Err(Error::invalid(
            "params.r",
            "the homogenization criterion divides by r and requires r > 0",
        ));
    }
    if !(ubar0 > 0.0 && vbar0 > 0.0) {
        return Err(Error::invalid(
            "initial means",
            format!("the homogenization criterion requires positive means, got ubar0 = {ubar0}, vbar0 = {vbar0}"),
        ));
    }
    let ModelParams {
        chi1,
        chi2,
        d,
        lambda,
        mu,
        r,
    } = *params;
    let lm = lambda + mu;
    let lhs = 8.0 * lm * lm * (d + 1.0) / (lambda * r * chi1 * ubar0 * vbar0) + 2.0 * (d + 1.0) / vbar0;
    Ok(StabilityMargin {
        margin: lhs - chi2,
        normalized: grid.length() == 1.0 && (ubar0 + vbar0 - 1.0).abs() <= 1e-12,
    })
}
