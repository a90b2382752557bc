//! Closed-form supersolution bounds for the linear differential inequalities
//!
//! ```text
//! y' + kappa y <= a e^{-alpha t} + b                      (pointwise forcing)
//! y' + kappa y <= f,  int_t^{t+tau} f <= a e^{-alpha t} + b  (window-averaged forcing)
//! ```
//!
//! and a numerical checker that integrates the extremal equation
//! `y' + kappa y = f` with classical RK4 and compares it against the bounds.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Fraction of each `tau`-window that carries the whole budget of a
/// front-loaded bump train.
pub const BUMP_FRACTION: f64 = 0.01;
/// Relative tolerance in `y(t) <= bound(t) + BOUND_TOL * (1 + bound(t))`.
pub const BOUND_TOL: f64 = 1e-9;
pub const MIN_SAMPLES: usize = 100;
const MAX_STEPS: u64 = 500_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    /// `f(t) = a e^{-alpha t} + b`, the extremal pointwise forcing.
    Pointwise,
    /// `f(t) = (a e^{-alpha t} + b) / tau`, spreading each window's budget evenly.
    Uniform,
    /// Window `k` concentrates `a e^{-alpha (k + 0.01) tau} + b` on its first 1%.
    FrontLoaded,
}

impl ForcingKind {
    /// Whether this forcing is an instance of the pointwise or the averaged lemma.
    pub fn is_averaged(self) -> bool {
        !matches!(self, ForcingKind::Pointwise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdiInstance {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    /// Averaging window, `0 < tau <= 1`.
    pub tau: f64,
    /// Horizon `T > tau`.
    pub horizon: f64,
    pub y0: f64,
    pub forcing: ForcingKind,
}

impl OdiInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid("kappa", format!("must be positive, got {}", self.kappa)));
        }
        if !(self.alpha > 0.0 && self.alpha < self.kappa) {
            return Err(Error::invalid(
                "alpha",
                format!(
                    "need 0 < alpha < kappa, got alpha = {}, kappa = {}",
                    self.alpha, self.kappa
                ),
            ));
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("y0", self.y0)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau", format!("must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.horizon > self.tau && self.horizon.is_finite()) {
            return Err(Error::invalid(
                "T",
                format!("horizon must exceed tau, got T = {}, tau = {}", self.horizon, self.tau),
            ));
        }
        Ok(())
    }

    /// Forcing at time `t`. Piecewise-constant forcings pick their piece from
    /// `piece_probe`, which lets an integrator step see one piece only.
    pub fn forcing_at(&self, t: f64, piece_probe: f64) -> f64 {
        let budget = |s: f64| self.a * (-self.alpha * s).exp() + self.b;
        match self.forcing {
            ForcingKind::Pointwise => budget(t),
            ForcingKind::Uniform => budget(t) / self.tau,
            ForcingKind::FrontLoaded => {
                let k = (piece_probe / self.tau).floor();
                let offset = piece_probe - k * self.tau;
                if offset < BUMP_FRACTION * self.tau {
                    budget((k + BUMP_FRACTION) * self.tau) / (BUMP_FRACTION * self.tau)
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact `int_{t0}^{t1} f`.
    pub fn forcing_integral(&self, t0: f64, t1: f64) -> f64 {
        let smooth = |t0: f64, t1: f64| {
            self.a / self.alpha * ((-self.alpha * t0).exp() - (-self.alpha * t1).exp()) + self.b * (t1 - t0)
        };
        match self.forcing {
            ForcingKind::Pointwise => smooth(t0, t1),
            ForcingKind::Uniform => smooth(t0, t1) / self.tau,
            ForcingKind::FrontLoaded => {
                let width = BUMP_FRACTION * self.tau;
                let first = (t0 / self.tau).floor() as i64;
                let last = (t1 / self.tau).floor() as i64;
                (first..=last)
                    .map(|k| {
                        let start = k as f64 * self.tau;
                        let overlap = (t1.min(start + width) - t0.max(start)).max(0.0);
                        let mass = self.a * (-self.alpha * (k as f64 + BUMP_FRACTION) * self.tau).exp() + self.b;
                        mass * overlap / width
                    })
                    .sum()
            }
        }
    }

    /// The bound matching this instance's lemma.
    pub fn bound(&self, t: f64) -> Result<f64> {
        if self.forcing.is_averaged() {
            lemma211_bound(self, t)
        } else {
            lemma21_bound(self, t)
        }
    }
}

/// `(y0 + a / (kappa - alpha)) e^{-alpha t} + b / kappa`.
pub fn lemma21_bound(inst: &OdiInstance, t: f64) -> Result<f64> {
    if !(inst.alpha < inst.kappa) {
        return Err(Error::invalid("alpha", "must be smaller than kappa"));
    }
    let c1 = inst.y0 + inst.a / (inst.kappa - inst.alpha);
    Ok(c1 * (-inst.alpha * t).exp() + inst.b / inst.kappa)
}

/// `{(y0 + a + a/(kappa - alpha) + b) e^alpha / tau + a e^alpha} e^{-alpha t}
///  + b / (kappa tau) + b`.
pub fn lemma211_bound(inst: &OdiInstance, t: f64) -> Result<f64> {
    if !(inst.alpha < inst.kappa) {
        return Err(Error::invalid("alpha", "must be smaller than kappa"));
    }
    if !(inst.tau > 0.0 && inst.tau <= 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1], got {}", inst.tau)));
    }
    let OdiInstance {
        kappa,
        a,
        b,
        alpha,
        tau,
        y0,
        ..
    } = *inst;
    let e_alpha = alpha.exp();
    let head = (y0 + a + a / (kappa - alpha) + b) * e_alpha / tau + a * e_alpha;
    Ok(head * (-alpha * t).exp() + b / (kappa * tau) + b)
}

/// Outcome of integrating one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdiReport {
    pub instance: OdiInstance,
    pub samples: usize,
    pub steps: u64,
    pub step: f64,
    /// Smallest `(bound - y) / (1 + bound)` over the sample times.
    pub min_scaled_slack: f64,
    /// Sample time where the smallest slack occurred.
    pub worst_t: f64,
    pub violations: usize,
}

impl OdiReport {
    /// Largest scaled excess of `y` over the bound, zero when the bound holds.
    pub fn max_violation(&self) -> f64 {
        (-self.min_scaled_slack).max(0.0)
    }
}

/// Integrates `y' + kappa y = f` and checks `y <= bound + 1e-9 (1 + bound)`
/// at `samples` equally spaced times in `(0, T)`.
pub fn verify_odi_bound(inst: &OdiInstance, samples: usize) -> Result<OdiReport> {
    inst.validate()?;
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(
            "samples",
            format!("need at least {MIN_SAMPLES}, got {samples}"),
        ));
    }
    let h_max = 1e-3 * (1.0 / inst.kappa).min(inst.tau);
    // whole number of steps per bump so steps never straddle a forcing jump
    let per_bump = (BUMP_FRACTION * inst.tau / h_max).ceil().max(1.0);
    let h = BUMP_FRACTION * inst.tau / per_bump;
    let total = (inst.horizon / h).ceil();
    if !(h > 1e-14) || total > MAX_STEPS as f64 {
        return Err(Error::StepUnderflow(format!(
            "step {h:e} needs {total:e} steps over T = {}",
            inst.horizon
        )));
    }
    let total = total as u64;

    let rhs = |t: f64, y: f64, probe: f64| inst.forcing_at(t, probe) - inst.kappa * y;
    let mut sample_steps: Vec<u64> = (1..=samples)
        .map(|j| ((j as f64 / (samples + 1) as f64) * total as f64).round() as u64)
        .map(|k| k.clamp(1, total.saturating_sub(1).max(1)))
        .collect();
    sample_steps.dedup();

    let mut y = inst.y0;
    let mut next_sample = sample_steps.iter().peekable();
    let mut min_slack = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut violations = 0;
    for k in 0..total {
        let t = k as f64 * h;
        let probe = t + 0.5 * h;
        let k1 = rhs(t, y, probe);
        let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, probe);
        let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, probe);
        let k4 = rhs(t + h, y + h * k3, probe);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !y.is_finite() {
            return Err(Error::StepUnderflow(format!("solution blew up at t = {}", t + h)));
        }
        if next_sample.next_if(|&&s| s == k + 1).is_some() {
            let ts = (k + 1) as f64 * h;
            let bound = inst.bound(ts)?;
            let slack = (bound - y) / (1.0 + bound);
            if slack < -BOUND_TOL {
                violations += 1;
            }
            if slack < min_slack {
                min_slack = slack;
                worst_t = ts;
            }
        }
    }
    Ok(OdiReport {
        instance: *inst,
        samples: sample_steps.len(),
        steps: total,
        step: h,
        min_scaled_slack: min_slack,
        worst_t,
        violations,
    })
}

/// Draws an admissible instance; `kind` selects the lemma and forcing family.
pub fn random_instance<R: Rng>(rng: &mut R, kind: ForcingKind) -> OdiInstance {
    let kappa = rng.gen_range(0.2..5.0);
    let tau = if kind.is_averaged() {
        rng.gen_range(0.05..=1.0)
    } else {
        1.0
    };
    OdiInstance {
        kappa,
        a: rng.gen_range(0.0..5.0),
        b: rng.gen_range(0.0..5.0),
        alpha: kappa * rng.gen_range(0.02..0.98),
        tau,
        horizon: tau + rng.gen_range(0.5..8.0),
        y0: rng.gen_range(0.0..5.0),
        forcing: kind,
    }
}

/// Aggregate over many instances.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub pointwise_instances: usize,
    pub averaged_instances: usize,
    pub integrations: usize,
    pub violations: usize,
    pub min_scaled_slack: f64,
    pub worst: Option<OdiReport>,
}

/// Checks `instances` random pointwise-forcing instances and `instances`
/// random averaged instances, each averaged instance under both the uniform
/// and the front-loaded forcing.
pub fn verify_suite<R: Rng>(rng: &mut R, instances: usize, samples: usize) -> Result<SuiteReport> {
    let mut jobs = Vec::with_capacity(3 * instances);
    for _ in 0..instances {
        jobs.push(random_instance(rng, ForcingKind::Pointwise));
    }
    for _ in 0..instances {
        let inst = random_instance(rng, ForcingKind::Uniform);
        jobs.push(inst);
        jobs.push(OdiInstance {
            forcing: ForcingKind::FrontLoaded,
            ..inst
        });
    }
    let reports = jobs
        .par_iter()
        .map(|inst| verify_odi_bound(inst, samples))
        .collect::<Result<Vec<_>>>()?;
    let worst = reports
        .iter()
        .min_by(|a, b| a.min_scaled_slack.total_cmp(&b.min_scaled_slack))
        .copied();
    Ok(SuiteReport {
        pointwise_instances: instances,
        averaged_instances: instances,
        integrations: reports.len(),
        violations: reports.iter().map(|r| r.violations).sum(),
        min_scaled_slack: worst.map_or(f64::INFINITY, |w| w.min_scaled_slack),
        worst,
    })
}
