//! Functionals evaluated on states and trajectories: deviation norms,
//! relative entropies, the conditional energy `F` and its dissipation `D`,
//! the admissible interval for the entropy weight `b`, the nutrient upper
//! bound and exponential-rate fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{mass_and_mean, EquilibriumInfo, FieldState, Grid, ModelParams};

/// Face density floor used in the dissipation when a neighbouring cell is empty.
pub const FACE_DENSITY_FLOOR: f64 = 1e-30;

/// Scalars recorded at one output time.
///
/// The columns written to `timeseries.csv` are listed in
/// [`DiagnosticsRecord::CSV_HEADER`]; the trailing fields are kept for
/// post-processing (re-weighting `F` and `D` with a different `b`, the
/// Csiszár–Kullback slacks).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub linf_dev_u: f64,
    pub linf_dev_v: f64,
    pub linf_dev_w: f64,
    pub l1_dev_u: f64,
    pub l1_dev_v: f64,
    pub kl_u: f64,
    pub kl_v: f64,
    pub grad_l2_u: f64,
    pub grad_l2_v: f64,
    pub grad_l2_w: f64,
    #[serde(rename = "F")]
    pub energy: f64,
    #[serde(rename = "D")]
    pub dissipation: f64,
    pub b_used: f64,
    pub b_feasible: bool,
    pub w_bound_slack: f64,
    /// `dx * sum (u_x)^2 / u_face`
    pub fisher_u: f64,
    pub fisher_v: f64,
    pub fisher_w: f64,
    pub ck_slack_u: f64,
    pub ck_slack_v: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: [&'static str; 24] = [
        "t",
        "mass_u",
        "mass_v",
        "min_u",
        "max_u",
        "min_v",
        "max_v",
        "min_w",
        "max_w",
        "linf_dev_u",
        "linf_dev_v",
        "linf_dev_w",
        "l1_dev_u",
        "l1_dev_v",
        "kl_u",
        "kl_v",
        "grad_l2_u",
        "grad_l2_v",
        "grad_l2_w",
        "F",
        "D",
        "b_used",
        "b_feasible",
        "w_bound_slack",
    ];

    /// Values in [`Self::CSV_HEADER`] order, formatted with round-trip precision.
    pub fn csv_fields(&self) -> [String; 24] {
        let f = |x: f64| format!("{x:?}");
        [
            f(self.t),
            f(self.mass_u),
            f(self.mass_v),
            f(self.min_u),
            f(self.max_u),
            f(self.min_v),
            f(self.max_v),
            f(self.min_w),
            f(self.max_w),
            f(self.linf_dev_u),
            f(self.linf_dev_v),
            f(self.linf_dev_w),
            f(self.l1_dev_u),
            f(self.l1_dev_v),
            f(self.kl_u),
            f(self.kl_v),
            f(self.grad_l2_u),
            f(self.grad_l2_v),
            f(self.grad_l2_w),
            f(self.energy),
            f(self.dissipation),
            f(self.b_used),
            self.b_feasible.to_string(),
            f(self.w_bound_slack),
        ]
    }

    /// `F` re-evaluated with a different entropy weight.
    pub fn energy_with_b(&self, b: f64, params: &ModelParams) -> f64 {
        self.kl_u + b * self.kl_v + params.chi1 / (2.0 * params.lambda) * self.fisher_w
    }

    /// `D` re-evaluated with a different entropy weight.
    pub fn dissipation_with_b(&self, b: f64, params: &ModelParams) -> f64 {
        0.5 * self.fisher_u + 0.5 * b * self.fisher_v + params.chi1 * params.mu / (4.0 * params.lambda) * self.fisher_w
    }
}

/// Sup- and L1-distances of a state from the homogeneous equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviationNorms {
    pub linf_u: f64,
    pub linf_v: f64,
    pub linf_w: f64,
    pub l1_u: f64,
    pub l1_v: f64,
    pub l1_w: f64,
}

fn linf_l1(field: &[f64], target: f64, grid: &Grid) -> (f64, f64) {
    let (max, sum) = field.iter().fold((0.0f64, 0.0), |(m, s), x| {
        let d = (x - target).abs();
        (m.max(d), s + d)
    });
    (max, grid.dx() * sum)
}

pub fn deviation_norms(state: &FieldState, ubar0: f64, vbar0: f64, wstar: f64, grid: &Grid) -> DeviationNorms {
    let (linf_u, l1_u) = linf_l1(&state.u, ubar0, grid);
    let (linf_v, l1_v) = linf_l1(&state.v, vbar0, grid);
    let (linf_w, l1_w) = linf_l1(&state.w, wstar, grid);
    DeviationNorms {
        linf_u,
        linf_v,
        linf_w,
        l1_u,
        l1_v,
        l1_w,
    }
}

/// `dx * sum f ln(f / mean)` with `0 ln 0 = 0`.
pub fn kl_entropy(field: &[f64], mean: f64, grid: &Grid) -> Result<f64> {
    if !(mean > 0.0) {
        return Err(Error::invalid(
            "kl_entropy mean",
            format!("must be positive, got {mean}"),
        ));
    }
    let sum: f64 = field.iter().filter(|&&f| f > 0.0).map(|&f| f * (f / mean).ln()).sum();
    Ok(grid.dx() * sum)
}

/// Discrete `W^{1,2}` seminorm `sqrt(dx * sum ((f[i+1] - f[i]) / dx)^2)`.
pub fn grad_seminorm(field: &[f64], grid: &Grid) -> f64 {
    let dx = grid.dx();
    let s: f64 = field.windows(2).map(|p| ((p[1] - p[0]) / dx).powi(2)).sum();
    (dx * s).sqrt()
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// `dx * sum_faces (f_x)^2 / f_face` over interior faces, with harmonic-mean
/// face values. Faces with a vanishing face value contribute nothing when the
/// gradient vanishes too and use `face_floor` otherwise.
pub fn relative_fisher(field: &[f64], grid: &Grid, face_floor: f64) -> f64 {
    let dx = grid.dx();
    let s: f64 = field
        .windows(2)
        .map(|p| {
            let grad = (p[1] - p[0]) / dx;
            if grad == 0.0 {
                0.0
            } else {
                grad * grad / harmonic_mean(p[0], p[1]).max(face_floor)
            }
        })
        .sum();
    dx * s
}

fn require_positive_w(state: &FieldState) -> Result<()> {
    match state.w.iter().position(|&w| !(w > 0.0)) {
        Some(i) => Err(Error::invalid(
            "state.w",
            format!("must be positive, got {} in cell {i}", state.w[i]),
        )),
        None => Ok(()),
    }
}

/// Entropy weight selection for `F` and `D`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BMode {
    /// Geometric mean of the admissible interval.
    #[default]
    AutoGeometricMean,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BChoice {
    pub b: f64,
    pub feasible: bool,
    pub lower: f64,
    pub upper: f64,
}

/// Picks `b` in `[4 chi1 lambda Lv Lw / mu, 1 / (2 chi2^2 Lu Lv)]`.
///
/// When the interval is empty, auto mode falls back to the lower endpoint
/// and reports `feasible = false`.
pub fn choose_b(params: &ModelParams, lu: f64, lv: f64, lw: f64, mode: BMode) -> Result<BChoice> {
    for (name, l) in [("Lu", lu), ("Lv", lv), ("Lw", lw)] {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(name, format!("sup-norm must be positive, got {l}")));
        }
    }
    let lower = 4.0 * params.chi1 * params.lambda * lv * lw / params.mu;
    let upper = 1.0 / (2.0 * params.chi2 * params.chi2 * lu * lv);
    let interval_ok = lower <= upper;
    let choice = match mode {
        BMode::AutoGeometricMean if interval_ok => BChoice {
            b: (lower * upper).sqrt(),
            feasible: true,
            lower,
            upper,
        },
        BMode::AutoGeometricMean => BChoice {
            b: lower,
            feasible: false,
            lower,
            upper,
        },
        BMode::Fixed(b) => {
            if !(b > 0.0) {
                return Err(Error::invalid("b", format!("fixed b must be positive, got {b}")));
            }
            BChoice {
                b,
                feasible: lower <= b && b <= upper,
                lower,
                upper,
            }
        }
    };
    Ok(choice)
}

/// `F = int u ln(u/ubar0) + b int v ln(v/vbar0) + chi1/(2 lambda) int w_x^2 / w`.
pub fn energy_f(state: &FieldState, ubar0: f64, vbar0: f64, b: f64, params: &ModelParams, grid: &Grid) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::invalid("b", format!("must be positive, got {b}")));
    }
    require_positive_w(state)?;
    let kl_u = kl_entropy(&state.u, ubar0, grid)?;
    let kl_v = kl_entropy(&state.v, vbar0, grid)?;
    let fisher_w = relative_fisher(&state.w, grid, FACE_DENSITY_FLOOR);
    Ok(kl_u + b * kl_v + params.chi1 / (2.0 * params.lambda) * fisher_w)
}

/// `D = 1/2 int u_x^2/u + b/2 int v_x^2/v + chi1 mu/(4 lambda) int w_x^2/w`.
pub fn dissipation_d(state: &FieldState, b: f64, params: &ModelParams, grid: &Grid) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::invalid("b", format!("must be positive, got {b}")));
    }
    require_positive_w(state)?;
    let fu = relative_fisher(&state.u, grid, FACE_DENSITY_FLOOR);
    let fv = relative_fisher(&state.v, grid, FACE_DENSITY_FLOOR);
    let fw = relative_fisher(&state.w, grid, FACE_DENSITY_FLOOR);
    Ok(0.5 * fu + 0.5 * b * fv + params.chi1 * params.mu / (4.0 * params.lambda) * fw)
}

/// Upper bound `r/mu + max(w0) e^{-mu t}` for the nutrient.
pub fn w_upper_bound(params: &ModelParams, w0_max: f64, t: f64) -> f64 {
    params.r / params.mu + w0_max * (-params.mu * t).exp()
}

/// Slack of the nutrient bound; negative beyond tolerance is a violation.
pub fn w_bound_check(record: &DiagnosticsRecord, params: &ModelParams, w0_max: f64) -> f64 {
    w_upper_bound(params, w0_max, record.t) - record.max_w
}

/// Slacks `2 ||f||_1 KL(f) - ||f - mean||_1^2` for `u` and `v`.
pub fn csiszar_kullback_check(state: &FieldState, ubar0: f64, vbar0: f64, grid: &Grid) -> Result<(f64, f64)> {
    let slack = |field: &[f64], mean: f64| -> Result<f64> {
        let mass = grid.dx() * field.iter().map(|x| x.abs()).sum::<f64>();
        let kl = kl_entropy(field, mean, grid)?;
        let (_, l1) = linf_l1(field, mean, grid);
        Ok(2.0 * mass * kl - l1 * l1)
    };
    Ok((slack(&state.u, ubar0)?, slack(&state.v, vbar0)?))
}

/// Exponential fit `value ~ c e^{-alpha t}` over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub c: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// Minimum number of samples in the fit window.
pub const MIN_FIT_POINTS: usize = 8;

/// Least-squares line through `(t, ln value)` over the last `tail_fraction`
/// of the series' time span.
pub fn fit_decay_rate(series: &[(f64, f64)], tail_fraction: f64) -> Result<DecayFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::invalid(
            "tail_fraction",
            format!("must be in (0, 1], got {tail_fraction}"),
        ));
    }
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Err(Error::InsufficientData("empty series".into()));
    };
    let t_start = last.0 - tail_fraction * (last.0 - first.0);
    let window: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t >= t_start).collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in fit window, need {MIN_FIT_POINTS}",
            window.len()
        )));
    }
    if let Some((t, v)) = window.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InsufficientData(format!(
            "non-positive value {v} at t = {t}; log-linear fit undefined"
        )));
    }
    let m = window.len() as f64;
    let t_mean = window.iter().map(|p| p.0).sum::<f64>() / m;
    let y_mean = window.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in &window {
        let dt = t - t_mean;
        let dy = v.ln() - y_mean;
        sxx += dt * dt;
        sxy += dt * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all fit points share one time".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let ss_res: f64 = window
        .iter()
        .map(|&(t, v)| (v.ln() - intercept - slope * t).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(DecayFit {
        alpha: -slope,
        c: intercept.exp(),
        r_squared,
        window: (window[0].0, last.0),
    })
}

/// How records pick `b`, the fit window and the running sup-norms feeding
/// the admissible `b` interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    pub b_mode: BMode,
    pub tail_fraction: f64,
    pub lu: f64,
    pub lv: f64,
    pub lw: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            b_mode: BMode::AutoGeometricMean,
            tail_fraction: 0.5,
            lu: 0.0,
            lv: 0.0,
            lw: 0.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(Error::invalid(
                "diagnostics.tail_fraction",
                format!("must lie in (0, 1), got {}", self.tail_fraction),
            ));
        }
        if let BMode::Fixed(b) = self.b_mode {
            if !(b > 0.0) {
                return Err(Error::invalid(
                    "diagnostics.b_value",
                    format!("must be positive, got {b}"),
                ));
            }
        }
        Ok(())
    }

    /// Raises the running sup-norms to cover `state`.
    pub fn absorb(&mut self, state: &FieldState) {
        let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.lu = self.lu.max(sup(&state.u));
        self.lv = self.lv.max(sup(&state.v));
        self.lw = self.lw.max(sup(&state.w));
    }
}

fn min_max(field: &[f64]) -> (f64, f64) {
    field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Evaluates every recorded functional on `state`.
///
/// `energy` must already have absorbed `state` when auto `b` is in use.
pub fn compute_record(
    state: &FieldState,
    params: &ModelParams,
    grid: &Grid,
    eq: &EquilibriumInfo,
    w0_max: f64,
    energy: &EnergyConfig,
) -> Result<DiagnosticsRecord> {
    require_positive_w(state)?;
    let devs = deviation_norms(state, eq.ubar0, eq.vbar0, eq.wstar, grid);
    let (min_u, max_u) = min_max(&state.u);
    let (min_v, max_v) = min_max(&state.v);
    let (min_w, max_w) = min_max(&state.w);
    let kl_u = kl_entropy(&state.u, eq.ubar0, grid)?;
    let kl_v = kl_entropy(&state.v, eq.vbar0, grid)?;
    let fisher_u = relative_fisher(&state.u, grid, FACE_DENSITY_FLOOR);
    let fisher_v = relative_fisher(&state.v, grid, FACE_DENSITY_FLOOR);
    let fisher_w = relative_fisher(&state.w, grid, FACE_DENSITY_FLOOR);
    let choice = choose_b(
        params,
        energy.lu.max(f64::MIN_POSITIVE),
        energy.lv.max(f64::MIN_POSITIVE),
        energy.lw.max(f64::MIN_POSITIVE),
        energy.b_mode,
    )?;
    let (ck_slack_u, ck_slack_v) = csiszar_kullback_check(state, eq.ubar0, eq.vbar0, grid)?;
    let mut record = DiagnosticsRecord {
        t: state.t,
        mass_u: mass_and_mean(&state.u, grid).0,
        mass_v: mass_and_mean(&state.v, grid).0,
        min_u,
        max_u,
        min_v,
        max_v,
        min_w,
        max_w,
        linf_dev_u: devs.linf_u,
        linf_dev_v: devs.linf_v,
        linf_dev_w: devs.linf_w,
        l1_dev_u: devs.l1_u,
        l1_dev_v: devs.l1_v,
        kl_u,
        kl_v,
        grad_l2_u: grad_seminorm(&state.u, grid),
        grad_l2_v: grad_seminorm(&state.v, grid),
        grad_l2_w: grad_seminorm(&state.w, grid),
        energy: 0.0,
        dissipation: 0.0,
        b_used: choice.b,
        b_feasible: choice.feasible,
        w_bound_slack: 0.0,
        fisher_u,
        fisher_v,
        fisher_w,
        ck_slack_u,
        ck_slack_v,
    };
    record.energy = record.energy_with_b(choice.b, params);
    record.dissipation = record.dissipation_with_b(choice.b, params);
    record.w_bound_slack = w_bound_check(&record, params, w0_max);
    Ok(record)
}
