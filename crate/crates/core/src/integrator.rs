//! Lie-split IMEX time stepping and full runs.
//!
//! One step advances the taxis terms explicitly with donor-cell fluxes
//! (both species use the pre-step state), then diffuses `u` and `v` with
//! backward Euler, then solves the nutrient equation with backward-Euler
//! diffusion, implicit absorption `lambda (u + v) + mu` evaluated at the new
//! densities and the supply `r` on the right-hand side.

use crate::diagnostics::{compute_record, DiagnosticsRecord, EnergyConfig};
use crate::discretization::{backward_euler_stage, taxis_divergence, taxis_fluxes};
use crate::error::{Error, Result};
use crate::model::{init_state, EquilibriumInfo, FieldState, Grid, InitialCondition, ModelParams};

/// Floor on the CFL speed so a homogeneous state falls back to `dt_max`.
pub const SPEED_FLOOR: f64 = 1e-30;
/// Densities below `-NEGATIVITY_TOL` abort the run.
pub const NEGATIVITY_TOL: f64 = 1e-12;
pub const DEFAULT_STEADY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    /// CFL safety factor in `(0, 1]`.
    pub safety: f64,
    pub dt_max: f64,
    pub t_end: f64,
    /// Spacing of diagnostic records in simulated time.
    pub output_every: f64,
    /// A run stops once all three sup-deviations from the equilibrium stay
    /// strictly below this for two consecutive checks; `0` disables it.
    pub steady_tol: f64,
    /// Times at which full states are kept.
    pub snapshot_times: Vec<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            safety: 0.9,
            dt_max: 1e-2,
            t_end: 1.0,
            output_every: 0.1,
            steady_tol: DEFAULT_STEADY_TOL,
            snapshot_times: Vec::new(),
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::invalid(
                "time.safety",
                format!("must lie in (0, 1], got {}", self.safety),
            ));
        }
        for (name, value) in [
            ("time.dt_max", self.dt_max),
            ("time.t_end", self.t_end),
            ("time.output_every", self.output_every),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(
                    name,
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if !(self.steady_tol >= 0.0) {
            return Err(Error::invalid(
                "diagnostics.steady_tol",
                format!("must be nonnegative, got {}", self.steady_tol),
            ));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_end)) {
            return Err(Error::invalid(
                "time.snapshot_times",
                format!("{t} lies outside [0, t_end = {}]", self.t_end),
            ));
        }
        Ok(())
    }
}

/// Largest stable step: `min(dt_max, safety * dx / speed)` where `speed` is
/// the fastest drain rate of any cell under either taxis term.
pub fn cfl_dt(state: &FieldState, params: &ModelParams, grid: &Grid, control: &StepControl) -> f64 {
    let (_, speed_u) = taxis_fluxes(&state.u, &state.w, params.chi1, grid);
    let (_, speed_v) = taxis_fluxes(&state.v, &state.u, params.chi2, grid);
    let speed = speed_u.max(speed_v).max(SPEED_FLOOR);
    control.dt_max.min(control.safety * grid.dx() / speed)
}

fn check_densities(field: &'static str, values: &[f64], t: f64) -> Result<()> {
    match values.iter().position(|x| !(x.is_finite() && *x >= -NEGATIVITY_TOL)) {
        Some(cell) => Err(Error::Invariant {
            field,
            cell,
            value: values[cell],
            t,
            rule: "density must be nonnegative",
        }),
        None => Ok(()),
    }
}

/// Advances the state by `dt`; `dt` must respect [`cfl_dt`].
pub fn imex_step(state: &FieldState, params: &ModelParams, grid: &Grid, dt: f64) -> Result<FieldState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let n = grid.n();
    let t = state.t + dt;
    let zeros = vec![0.0; n];

    let (tend_u, _) = taxis_divergence(&state.u, &state.w, params.chi1, grid);
    let (tend_v, _) = taxis_divergence(&state.v, &state.u, params.chi2, grid);
    let u_star: Vec<f64> = state.u.iter().zip(&tend_u).map(|(u, du)| u + dt * du).collect();
    let v_star: Vec<f64> = state.v.iter().zip(&tend_v).map(|(v, dv)| v + dt * dv).collect();
    check_densities("u", &u_star, t)?;
    check_densities("v", &v_star, t)?;

    let u = backward_euler_stage(&u_star, 1.0, dt, grid, &zeros, &zeros)?;
    let v = backward_euler_stage(&v_star, 1.0, dt, grid, &zeros, &zeros)?;
    check_densities("u", &u, t)?;
    check_densities("v", &v, t)?;

    let absorption: Vec<f64> = u
        .iter()
        .zip(&v)
        .map(|(u, v)| params.lambda * (u + v) + params.mu)
        .collect();
    let supply = vec![params.r; n];
    let w = backward_euler_stage(&state.w, params.d, dt, grid, &absorption, &supply)?;
    if let Some(cell) = w.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Invariant {
            field: "w",
            cell,
            value: w[cell],
            t,
            rule: "nutrient must be positive",
        });
    }
    Ok(FieldState { t, u, v, w })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    ReachedEnd,
    SteadyState,
    /// A step failed; the trajectory keeps the last good state.
    Failed {
        message: String,
        exit_code: i32,
    },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReachedEnd => "reached_t_end",
            Termination::SteadyState => "steady_state",
            Termination::Failed { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<FieldState>,
    pub termination: Termination,
    /// Last successfully computed state.
    pub final_state: FieldState,
    pub equilibrium: EquilibriumInfo,
    pub w0_max: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        self.termination == Termination::SteadyState
    }
}

fn is_steady(state: &FieldState, eq: &EquilibriumInfo, tol: f64) -> bool {
    let within = |f: &[f64], c: f64| f.iter().all(|x| (x - c).abs() < tol);
    within(&state.u, eq.ubar0) && within(&state.v, eq.vbar0) && within(&state.w, eq.wstar)
}

/// Samples the initial condition and runs it; see [`run_from_state`].
pub fn run_simulation(
    ic: &InitialCondition,
    params: &ModelParams,
    grid: &Grid,
    control: &StepControl,
    diag_config: &EnergyConfig,
) -> Result<Trajectory> {
    let state = init_state(ic, grid)?;
    run_from_state(state, params, grid, control, diag_config)
}

/// Steps from `initial` until `t_end` or steady state, recording diagnostics
/// at every multiple of `output_every` and at `t_end`.
///
/// Invalid inputs are returned as errors; failures during stepping end the
/// run with [`Termination::Failed`].
pub fn run_from_state(
    initial: FieldState,
    params: &ModelParams,
    grid: &Grid,
    control: &StepControl,
    diag_config: &EnergyConfig,
) -> Result<Trajectory> {
    params.validate()?;
    control.validate()?;
    diag_config.validate()?;
    initial.check(grid, 0.0)?;

    let eq = EquilibriumInfo::from_state(&initial, params, grid);
    let w0_max = initial.w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut energy = *diag_config;
    energy.absorb(&initial);

    let mut snap_times = control.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    snap_times.dedup();
    let mut snapshots = Vec::new();
    let mut snap_iter = snap_times.into_iter().peekable();
    while snap_iter.next_if(|&t| t <= initial.t).is_some() {
        snapshots.push(initial.clone());
    }

    let mut steady_hits = usize::from(control.steady_tol > 0.0 && is_steady(&initial, &eq, control.steady_tol));
    let mut records = Vec::new();
    let mut output_index: u64 = 1;
    let mut steps = 0usize;
    let mut state = initial;

    let termination = loop {
        let t_out = (output_index as f64 * control.output_every).min(control.t_end);
        let target = snap_iter.peek().map_or(t_out, |&s| s.min(t_out));
        let remaining = target - state.t;
        let dt_cfl = cfl_dt(&state, params, grid, control);
        let (dt, lands) = if dt_cfl >= remaining {
            (remaining, true)
        } else {
            (dt_cfl, false)
        };
        if !(dt > 1e-14 * target.abs().max(1.0)) && !lands {
            break Termination::Failed {
                message: format!("time step underflow: dt = {dt:e} at t = {}", state.t),
                exit_code: 2,
            };
        }
        let next = if dt > 0.0 {
            match imex_step(&state, params, grid, dt) {
                Ok(s) => s,
                Err(e) => {
                    break Termination::Failed {
                        message: e.to_string(),
                        exit_code: e.exit_code(),
                    }
                }
            }
        } else {
            state.clone()
        };
        state = next;
        steps += 1;
        if lands {
            state.t = target;
        } else {
            continue;
        }

        while snap_iter.next_if(|&s| s <= state.t).is_some() {
            snapshots.push(state.clone());
        }
        if state.t < t_out {
            continue;
        }

        energy.absorb(&state);
        let record = match compute_record(&state, params, grid, &eq, w0_max, &energy) {
            Ok(r) => r,
            Err(e) => {
                break Termination::Failed {
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                }
            }
        };
        records.push(record);
        output_index += 1;

        if control.steady_tol > 0.0 && is_steady(&state, &eq, control.steady_tol) {
            steady_hits += 1;
        } else {
            steady_hits = 0;
        }
        if steady_hits >= 2 {
            break Termination::SteadyState;
        }
        if t_out >= control.t_end {
            break Termination::ReachedEnd;
        }
    };

    Ok(Trajectory {
        records,
        snapshots,
        termination,
        final_state: state,
        equilibrium: eq,
        w0_max,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, equilibrium_w, mass_and_mean, FieldInit};

    fn unit_params() -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cfl_examples() {
        let g = build_grid(10, 1.0).unwrap();
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let control = StepControl {
            safety: 0.5,
            dt_max: 1e9,
            ..StepControl::default()
        };
        let flat = FieldState::homogeneous(&g, 1.0, 1.0, 1.0);
        assert_eq!(cfl_dt(&flat, &p, &g, &StepControl::default()), 1e-2);

        // one face with w gradient 1: w jumps by dx between cells 4 and 5
        let mut s = flat.clone();
        for i in 5..10 {
            s.w[i] += 0.1;
        }
        let dt = cfl_dt(&s, &p, &g, &control);
        assert!((dt - 0.025).abs() < 1e-14, "{dt}");
        let full = StepControl {
            safety: 1.0,
            ..control.clone()
        };
        assert!((cfl_dt(&s, &p, &g, &full) - 2.0 * dt).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_equilibrium_is_fixed() {
        let g = build_grid(32, 1.0).unwrap();
        let p = ModelParams::new(1.5, 2.0, 0.7, 1.2, 0.8, 1.3).unwrap();
        let ws = equilibrium_w(&p, 0.6, 0.3);
        let mut s = FieldState::homogeneous(&g, 0.6, 0.3, ws);
        for _ in 0..100 {
            s = imex_step(&s, &p, &g, 0.01).unwrap();
        }
        for (f, c) in [(&s.u, 0.6), (&s.v, 0.3), (&s.w, ws)] {
            assert!(f.iter().all(|x| (x - c).abs() < 1e-12));
        }
        assert!((s.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_diffusion_limit() {
        let g = build_grid(40, 1.0).unwrap();
        let p = ModelParams::new(1e-300, 1e-300, 1.0, 1e-300, 1.0, 0.0).unwrap();
        let ic = InitialCondition {
            u: FieldInit::GaussianBump {
                center: 0.3,
                width: 0.05,
                height: 2.0,
                baseline: 0.1,
            },
            v: FieldInit::ConstantPlusCosine {
                base: 1.0,
                amplitude: 0.5,
                mode: 3,
            },
            w: FieldInit::Constant { value: 1.0 },
        };
        let mut s = init_state(&ic, &g).unwrap();
        let (mu0, mv0) = (mass_and_mean(&s.u, &g).0, mass_and_mean(&s.v, &g).0);
        let mut sup_u = s.u.iter().copied().fold(0.0, f64::max);
        for _ in 0..200 {
            s = imex_step(&s, &p, &g, 1e-3).unwrap();
            let su = s.u.iter().copied().fold(0.0, f64::max);
            assert!(su <= sup_u + 1e-15);
            sup_u = su;
        }
        assert!((mass_and_mean(&s.u, &g).0 - mu0).abs() < 1e-13);
        assert!((mass_and_mean(&s.v, &g).0 - mv0).abs() < 1e-13);
    }

    #[test]
    fn step_rejects_cfl_violation() {
        let g = build_grid(8, 1.0).unwrap();
        let p = ModelParams::new(50.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let mut s = FieldState::homogeneous(&g, 1.0, 1.0, 1.0);
        s.w[4] = 3.0;
        let err = imex_step(&s, &p, &g, 1.0).unwrap_err();
        assert!(matches!(err, Error::Invariant { field: "u", .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    fn homogeneous_ic() -> InitialCondition {
        InitialCondition {
            u: FieldInit::Constant { value: 0.5 },
            v: FieldInit::Constant { value: 0.5 },
            w: FieldInit::Constant { value: 0.5 },
        }
    }

    #[test]
    fn homogeneous_run_stops_at_first_record() {
        let g = build_grid(16, 1.0).unwrap();
        let traj = run_simulation(
            &homogeneous_ic(),
            &unit_params(),
            &g,
            &StepControl {
                t_end: 10.0,
                ..StepControl::default()
            },
            &EnergyConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::SteadyState);
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn short_run_has_single_final_record() {
        let g = build_grid(16, 1.0).unwrap();
        let ic = InitialCondition {
            u: FieldInit::ConstantPlusCosine {
                base: 1.0,
                amplitude: 0.2,
                mode: 1,
            },
            ..homogeneous_ic()
        };
        let control = StepControl {
            t_end: 0.1,
            output_every: 5.0,
            snapshot_times: vec![0.0, 0.05, 0.1],
            ..StepControl::default()
        };
        let traj = run_simulation(&ic, &unit_params(), &g, &control, &EnergyConfig::default()).unwrap();
        assert_eq!(traj.termination, Termination::ReachedEnd);
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.records[0].t, 0.1);
        let snap_t: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(snap_t, vec![0.0, 0.05, 0.1]);
    }

    #[test]
    fn record_times_are_exact_multiples() {
        let g = build_grid(16, 1.0).unwrap();
        let ic = InitialCondition {
            w: FieldInit::GaussianBump {
                center: 0.5,
                width: 0.1,
                height: 1.0,
                baseline: 0.5,
            },
            ..homogeneous_ic()
        };
        let control = StepControl {
            t_end: 1.05,
            output_every: 0.1,
            dt_max: 0.03,
            steady_tol: 0.0,
            ..StepControl::default()
        };
        let traj = run_simulation(&ic, &unit_params(), &g, &control, &EnergyConfig::default()).unwrap();
        let times: Vec<f64> = traj.records.iter().map(|r| r.t).collect();
        assert_eq!(times.len(), 11);
        for (k, t) in times.iter().take(10).enumerate() {
            assert_eq!(*t, (k + 1) as f64 * 0.1);
        }
        assert_eq!(*times.last().unwrap(), 1.05);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn failed_step_keeps_last_good_state() {
        let g = build_grid(8, 1.0).unwrap();
        let mut s = FieldState::homogeneous(&g, 1.0, 1.0, 1.0);
        s.w[3] = 2.0;
        let mut broken = s.clone();
        broken.u[0] = -1.0;
        let control = StepControl::default();
        assert!(run_from_state(broken, &unit_params(), &g, &control, &EnergyConfig::default()).is_err());

        // taxis so strong that the CFL step underflows
        let p = ModelParams::new(1e20, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let traj = run_from_state(s.clone(), &p, &g, &control, &EnergyConfig::default()).unwrap();
        assert!(matches!(traj.termination, Termination::Failed { exit_code: 2, .. }));
        assert_eq!(traj.final_state, s);
        assert!(traj.records.is_empty());
    }
}
