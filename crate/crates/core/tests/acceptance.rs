//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use forager_sim::config::{parse_config, SimConfig};
use forager_sim::diagnostics::EnergyConfig;
use forager_sim::integrator::{imex_step, run_from_state, run_simulation, StepControl, Termination, Trajectory};
use forager_sim::model::{
    build_grid, equilibrium_w, init_state, mass_and_mean, stability_margin, FieldInit, FieldState, Grid,
    InitialCondition, ModelParams,
};
use forager_sim::ode_lemmas::{lemma21_bound, verify_suite, ForcingKind, OdiInstance};
use forager_sim::output::{deviation_decay_fit, energy_tail_check, CK_TOL};
use forager_sim::sweep::{run_sweep, Axis, AxisName, SweepSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_params() -> ModelParams {
    ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
}

fn cosine(base: f64, amplitude: f64, mode: u32) -> FieldInit {
    FieldInit::ConstantPlusCosine { base, amplitude, mode }
}

fn no_steady(t_end: f64, output_every: f64, dt_max: f64) -> StepControl {
    StepControl {
        t_end,
        output_every,
        dt_max,
        steady_tol: 0.0,
        ..StepControl::default()
    }
}

fn ac1() -> Outcome {
    let grid = build_grid(128, 1.0).unwrap();
    let params = ModelParams::new(1.3, 0.7, 0.5, 1.1, 0.9, 1.2).unwrap();
    let (ubar, vbar) = (0.6, 0.4);
    let state = FieldState::homogeneous(&grid, ubar, vbar, equilibrium_w(&params, ubar, vbar));
    let traj = run_from_state(
        state,
        &params,
        &grid,
        &no_steady(50.0, 1.0, 1e-2),
        &EnergyConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let dev = traj
        .records
        .iter()
        .map(|r| r.linf_dev_u.max(r.linf_dev_v).max(r.linf_dev_w))
        .fold(0.0f64, f64::max);
    ensure(
        traj.termination == Termination::ReachedEnd && dev <= 1e-12,
        format!("max sup-deviation {dev:e} over {} steps", traj.steps),
    )
}

fn perturbed_run() -> (Trajectory, FieldState, ModelParams, Grid) {
    let grid = build_grid(256, 2.0).unwrap();
    let params = ModelParams::new(2.0, 1.5, 0.5, 1.0, 1.0, 1.0).unwrap();
    let ic = InitialCondition {
        u: cosine(1.0, 0.3, 1),
        v: FieldInit::GaussianBump {
            center: 0.6,
            width: 0.2,
            height: 0.8,
            baseline: 0.2,
        },
        w: cosine(0.5, 0.3, 2),
    };
    let initial = init_state(&ic, &grid).unwrap();
    let traj = run_from_state(
        initial.clone(),
        &params,
        &grid,
        &no_steady(100.0, 0.1, 1e-2),
        &EnergyConfig::default(),
    )
    .unwrap();
    (traj, initial, params, grid)
}

fn ac2() -> Outcome {
    let (traj, initial, _, grid) = perturbed_run();
    let m_u = mass_and_mean(&initial.u, &grid).0;
    let m_v = mass_and_mean(&initial.v, &grid).0;
    let drift = traj
        .records
        .iter()
        .map(|r| ((r.mass_u - m_u) / m_u).abs().max(((r.mass_v - m_v) / m_v).abs()))
        .fold(0.0f64, f64::max);
    ensure(
        traj.termination == Termination::ReachedEnd && traj.steps >= 10_000 && drift <= 1e-10,
        format!("{} steps, max relative mass drift {drift:e}", traj.steps),
    )
}

fn ac3() -> Outcome {
    let (traj, _, params, _) = perturbed_run();
    let scale = params.r / params.mu + traj.w0_max;
    let worst_slack = traj
        .records
        .iter()
        .map(|r| r.w_bound_slack)
        .fold(f64::INFINITY, f64::min);
    let min_w = traj.records.iter().map(|r| r.min_w).fold(f64::INFINITY, f64::min);
    let min_uv = traj
        .records
        .iter()
        .map(|r| r.min_u.min(r.min_v))
        .fold(f64::INFINITY, f64::min);
    ensure(
        traj.termination == Termination::ReachedEnd && worst_slack >= -1e-8 * scale && min_w > 0.0 && min_uv >= 0.0,
        format!("min w-bound slack {worst_slack:e}, min w {min_w:e}, min u/v {min_uv:e}"),
    )
}

fn restrict(fine: &[f64], n: usize) -> Vec<f64> {
    let k = fine.len() / n;
    fine.chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect()
}

fn ac4() -> Outcome {
    let params = unit_params();
    let eps = 1e-3;
    let ic = InitialCondition {
        u: cosine(1.0, eps, 1),
        v: cosine(0.5, eps, 2),
        w: cosine(equilibrium_w(&params, 1.0, 0.5), eps, 1),
    };
    let control = StepControl {
        dt_max: 1e-4,
        ..no_steady(0.5, 0.5, 1e-4)
    };
    let solve = |n: usize| {
        let grid = build_grid(n, 1.0).unwrap();
        run_simulation(&ic, &params, &grid, &control, &EnergyConfig::default())
            .unwrap()
            .final_state
    };
    let reference = solve(1024);
    let levels = [64, 128, 256];
    let mut errors = [[0.0; 3]; 3];
    for (j, &n) in levels.iter().enumerate() {
        let coarse = solve(n);
        let fields = [
            (&coarse.u, &reference.u),
            (&coarse.v, &reference.v),
            (&coarse.w, &reference.w),
        ];
        for (f, (c, r)) in fields.into_iter().enumerate() {
            errors[f][j] = c
                .iter()
                .zip(restrict(r, n))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, e) in ["u", "v", "w"].iter().zip(errors) {
        let ratios = [e[0] / e[1], e[1] / e[2]];
        ok &= ratios.iter().all(|r| (3.0..=5.0).contains(r));
        detail.push(format!("{name} {:.2}/{:.2}", ratios[0], ratios[1]));
    }
    ensure(ok, format!("error ratios {}", detail.join(", ")))
}

fn normalized_run() -> (Trajectory, ModelParams, Grid, f64) {
    let grid = build_grid(128, 1.0).unwrap();
    let params = unit_params();
    let ic = InitialCondition {
        u: cosine(0.99, 1e-2, 1),
        v: cosine(0.01, 1e-2, 1),
        w: cosine(equilibrium_w(&params, 0.99, 0.01), 1e-2, 2),
    };
    let control = StepControl {
        t_end: 200.0,
        output_every: 0.01,
        ..StepControl::default()
    };
    let energy = EnergyConfig::default();
    let traj = run_simulation(&ic, &params, &grid, &control, &energy).unwrap();
    (traj, params, grid, energy.tail_fraction)
}

fn ac5() -> Outcome {
    let (traj, params, grid, tail) = normalized_run();
    let eq = traj.equilibrium;
    let margin = stability_margin(&params, eq.ubar0, eq.vbar0, &grid).map_err(|e| e.to_string())?;
    let final_w = traj.records.last().map_or(f64::NAN, |r| r.linf_dev_w);
    let fit = deviation_decay_fit(&traj.records, eq.ubar0, tail).map_err(|e| e.to_string())?;
    let ck = traj
        .records
        .iter()
        .map(|r| r.ck_slack_u.min(r.ck_slack_v))
        .fold(f64::INFINITY, f64::min);
    ensure(
        margin.normalized
            && margin.margin > 0.0
            && traj.converged()
            && final_w <= 1e-6
            && fit.alpha > 0.0
            && fit.r_squared >= 0.99
            && ck >= -CK_TOL,
        format!(
            "margin {:.1}, {} at t = {:.2}, final |w - w*| {final_w:e}, alpha {:.4} (r^2 {:.5}), min CK slack {ck:e}",
            margin.margin,
            traj.termination.label(),
            traj.final_state.t,
            fit.alpha,
            fit.r_squared
        ),
    )
}

fn ac6() -> Outcome {
    let (traj, params, _, tail) = normalized_run();
    let report = energy_tail_check(&traj.records, &params, tail).map_err(|e| e.to_string())?;
    ensure(
        report.feasible && report.pairs > 0 && report.violation_fraction() <= 0.01,
        format!(
            "b = {:.4} in [{:.4}, {:.4}], {} of {} pairs violate",
            report.b, report.b_lower, report.b_upper, report.violations, report.pairs
        ),
    )
}

fn ac7() -> Outcome {
    // Frozen output of tests/data/one_step_oracle.py.
    const U: [f64; 4] = [
        0.5996565465439639,
        0.7725099624437374,
        0.8735506436168688,
        0.3542828473954302,
    ];
    const V: [f64; 4] = [
        0.22530684326710823,
        0.4534746136865343,
        0.8198587196467991,
        0.6013598233995585,
    ];
    const W: [f64; 4] = [
        0.9684293568128317,
        0.7717649672313877,
        1.1903319869425713,
        0.9265756539131036,
    ];
    let grid = build_grid(4, 1.0).unwrap();
    let params = ModelParams::new(1.5, 0.7, 0.8, 1.2, 0.6, 0.9).unwrap();
    let state = FieldState {
        t: 0.0,
        u: vec![0.5, 1.0, 0.8, 0.3],
        v: vec![0.2, 0.4, 0.9, 0.6],
        w: vec![1.0, 0.7, 1.3, 0.9],
    };
    let next = imex_step(&state, &params, &grid, 0.01).map_err(|e| e.to_string())?;
    let err = [(&next.u, U), (&next.v, V), (&next.w, W)]
        .iter()
        .flat_map(|(got, want)| got.iter().zip(want).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    ensure(err <= 1e-12, format!("max cell difference {err:e}"))
}

fn ac8() -> Outcome {
    let example = OdiInstance {
        kappa: 2.0,
        a: 1.0,
        b: 1.0,
        alpha: 1.0,
        tau: 1.0,
        horizon: 2.0,
        y0: 0.0,
        forcing: ForcingKind::Pointwise,
    };
    let closed = lemma21_bound(&example, 1.0).map_err(|e| e.to_string())?;
    let expected = (-1.0f64).exp() + 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d1);
    let report = verify_suite(&mut rng, 500, 200).map_err(|e| e.to_string())?;
    ensure(
        (closed - expected).abs() <= 1e-12
            && report.violations == 0
            && report.pointwise_instances >= 500
            && report.averaged_instances >= 500,
        format!(
            "closed form {closed:.12}, {} + {} instances, {} integrations, {} violations, min scaled slack {:e}",
            report.pointwise_instances,
            report.averaged_instances,
            report.integrations,
            report.violations,
            report.min_scaled_slack
        ),
    )
}

const SWEEP_BASE: &str = r#"
[domain]
length = 1.0
n = 64

[params]
chi1 = 1.0
chi2 = 1.0
d = 1.0
lambda = 1.0
mu = 1.0
r = 1.0

[init]
u = { kind = "constant_plus_cosine", base = 0.9, amplitude = 0.01, mode = 1 }
v = { kind = "constant_plus_cosine", base = 0.1, amplitude = 0.005, mode = 2 }
w = { kind = "constant_plus_cosine", base = 0.5, amplitude = 0.01, mode = 1 }

[time]
t_end = 60.0
output_every = 0.1
"#;

fn ac9() -> Outcome {
    let base: SimConfig = parse_config(SWEEP_BASE).map_err(|e| e.to_string())?;
    let spec = SweepSpec {
        base,
        axes: vec![
            Axis {
                name: AxisName::Chi2,
                values: vec![1.0, 10.0, 100.0, 300.0, 1000.0, 3000.0],
            },
            Axis {
                name: AxisName::Vbar0,
                values: vec![0.01, 0.05, 0.1, 0.2, 0.35, 0.5],
            },
        ],
        total_mean: Some(1.0),
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let points = run_sweep(&spec, workers).map_err(|e| e.to_string())?;
    let complete = points.len() == 36 && points.iter().all(|p| p.margin.is_some());
    let strong: Vec<_> = points.iter().filter(|p| p.margin.is_some_and(|m| m > 100.0)).collect();
    let failed: Vec<String> = strong
        .iter()
        .filter(|p| !p.converged)
        .map(|p| format!("({}, {})", p.coords[0], p.coords[1]))
        .collect();
    let negative = points.iter().filter(|p| p.margin.is_some_and(|m| m < 0.0)).count();
    let converged = points.iter().filter(|p| p.converged).count();
    let with_alpha = points.iter().filter(|p| p.fitted_alpha.is_some()).count();
    ensure(
        complete && failed.is_empty(),
        format!(
            "{} points, {} with margin > 100, {negative} negative, {converged} converged, {with_alpha} fitted{}",
            points.len(),
            strong.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(", not converged: {}", failed.join(" "))
            }
        ),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: "AC-1",
            title: "steady-state exactness",
            budget: Duration::from_secs(5),
            check: ac1,
        },
        Criterion {
            id: "AC-2",
            title: "mass conservation",
            budget: Duration::from_secs(30),
            check: ac2,
        },
        Criterion {
            id: "AC-3",
            title: "nutrient sup-bound and positivity",
            budget: Duration::from_secs(30),
            check: ac3,
        },
        Criterion {
            id: "AC-4",
            title: "spatial order",
            budget: Duration::from_secs(120),
            check: ac4,
        },
        Criterion {
            id: "AC-5",
            title: "decay to the homogeneous state",
            budget: Duration::from_secs(60),
            check: ac5,
        },
        Criterion {
            id: "AC-6",
            title: "energy dissipation",
            budget: Duration::from_secs(60),
            check: ac6,
        },
        Criterion {
            id: "AC-7",
            title: "one-step oracle",
            budget: Duration::from_secs(5),
            check: ac7,
        },
        Criterion {
            id: "AC-8",
            title: "ODE comparison lemmas",
            budget: Duration::from_secs(60),
            check: ac8,
        },
        Criterion {
            id: "AC-9",
            title: "stability threshold sweep",
            budget: Duration::from_secs(600),
            check: ac9,
        },
    ];
    let mut failures = 0;
    for c in criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => (false, d),
        };
        failures += usize::from(!ok);
        println!(
            "{} {} {}: {detail} [{:.2}s]",
            c.id,
            if ok { "PASS" } else { "FAIL" },
            c.title,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
