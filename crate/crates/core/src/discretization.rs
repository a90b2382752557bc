//! Conservative finite-volume operators with zero-flux boundaries and the
//! tridiagonal solver used by the implicit diffusion stages.

use crate::error::{Error, Result};
use crate::model::Grid;

/// Pivots smaller than this in magnitude are treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-30;

/// Three-point Laplacian with mirrored ghost cells.
///
/// The boundary rows only see one neighbour, so `dx * sum(out)` telescopes to zero.
pub fn laplacian_neumann(field: &[f64], grid: &Grid) -> Vec<f64> {
    let n = field.len();
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    (0..n)
        .map(|i| {
            let left = if i == 0 { field[i] } else { field[i - 1] };
            let right = if i + 1 == n { field[i] } else { field[i + 1] };
            (left - 2.0 * field[i] + right) * inv_dx2
        })
        .collect()
}

/// Fluxes on the `n + 1` cell faces; the two boundary entries are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    pub flux: Vec<f64>,
}

impl FaceFluxes {
    /// `-(F[i+1] - F[i]) / dx` for every cell.
    pub fn divergence(&self, grid: &Grid) -> Vec<f64> {
        let inv_dx = 1.0 / grid.dx();
        self.flux.windows(2).map(|f| -(f[1] - f[0]) * inv_dx).collect()
    }
}

/// Donor-cell taxis fluxes `F = V * density_upwind` with
/// `V[i+1/2] = chi * (potential[i+1] - potential[i]) / dx`.
///
/// Also returns the largest rate at which any single cell is drained
/// (sum of outgoing face velocities); `dt * rate / dx <= 1` keeps an explicit
/// update nonnegative.
pub fn taxis_fluxes(density: &[f64], potential: &[f64], chi: f64, grid: &Grid) -> (FaceFluxes, f64) {
    let n = density.len();
    let inv_dx = 1.0 / grid.dx();
    let mut flux = vec![0.0; n + 1];
    let mut velocity = vec![0.0; n + 1];
    for i in 0..n - 1 {
        let vel = chi * (potential[i + 1] - potential[i]) * inv_dx;
        let donor = if vel > 0.0 {
            density[i]
        } else if vel < 0.0 {
            density[i + 1]
        } else {
            0.5 * (density[i] + density[i + 1])
        };
        velocity[i + 1] = vel;
        flux[i + 1] = vel * donor;
    }
    let max_outflow = (0..n)
        .map(|i| velocity[i + 1].max(0.0) + (-velocity[i]).max(0.0))
        .fold(0.0, f64::max);
    (FaceFluxes { flux }, max_outflow)
}

/// Tendency `-(density * chi * potential_x)_x` of the taxis term and the
/// cell drain rate used for the CFL restriction.
pub fn taxis_divergence(density: &[f64], potential: &[f64], chi: f64, grid: &Grid) -> (Vec<f64>, f64) {
    let (fluxes, speed) = taxis_fluxes(density, potential, chi, grid);
    (fluxes.divergence(grid), speed)
}

/// Tridiagonal linear system `A x = rhs` with `A` given by its three bands.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    /// Applies the matrix to `x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }
}

/// Backward-Euler system
/// `(I/dt - diffusivity * L + diag(extra_diag)) x = field_old / dt + extra_rhs`
/// with `L` the zero-flux Laplacian.
pub fn assemble_diffusion_system(
    field_old: &[f64],
    diffusivity: f64,
    dt: f64,
    grid: &Grid,
    extra_diag: &[f64],
    extra_rhs: &[f64],
) -> Result<TridiagonalSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(diffusivity >= 0.0) {
        return Err(Error::invalid(
            "diffusivity",
            format!("must be nonnegative, got {diffusivity}"),
        ));
    }
    let n = field_old.len();
    if extra_diag.len() != n || extra_rhs.len() != n {
        return Err(Error::invalid(
            "diffusion system",
            "extra terms must match the field length",
        ));
    }
    if let Some(x) = extra_diag.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::invalid(
            "diffusion system",
            format!("extra_diag must be nonnegative, got {x}"),
        ));
    }
    let k = diffusivity / (grid.dx() * grid.dx());
    let inv_dt = 1.0 / dt;
    let diag = (0..n)
        .map(|i| {
            let neighbours = if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
            inv_dt + k * neighbours + extra_diag[i]
        })
        .collect();
    let rhs = field_old.iter().zip(extra_rhs).map(|(f, s)| f * inv_dt + s).collect();
    Ok(TridiagonalSystem {
        lower: vec![-k; n - 1],
        diag,
        upper: vec![-k; n - 1],
        rhs,
    })
}

/// Thomas algorithm (no pivoting); intended for diagonally dominant systems.
pub fn thomas_solve(system: &TridiagonalSystem) -> Result<Vec<f64>> {
    let TridiagonalSystem {
        lower,
        diag,
        upper,
        rhs,
    } = system;
    let n = diag.len();
    if n == 0 || rhs.len() != n || lower.len() + 1 != n || upper.len() + 1 != n {
        return Err(Error::invalid(
            "tridiagonal system",
            format!(
                "band lengths lower={}, diag={n}, upper={}, rhs={} are inconsistent",
                lower.len(),
                upper.len(),
                rhs.len()
            ),
        ));
    }

    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < PIVOT_FLOOR {
        return Err(Error::SingularPivot { row: 0, pivot });
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot.abs() < PIVOT_FLOOR {
            return Err(Error::SingularPivot { row: i, pivot });
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// One backward-Euler stage `(I/dt - diffusivity * lap + extra_diag) x = old/dt + extra_rhs`,
/// solved for the increment `x - old`.
///
/// The increment's right-hand side is built from face differences, so a
/// constant field with balanced source stays exactly constant and the mass
/// error does not accumulate with the magnitude of `old`.
pub fn backward_euler_stage(
    old: &[f64],
    diffusivity: f64,
    dt: f64,
    grid: &Grid,
    extra_diag: &[f64],
    extra_rhs: &[f64],
) -> Result<Vec<f64>> {
    let mut system = assemble_diffusion_system(old, diffusivity, dt, grid, extra_diag, extra_rhs)?;
    let n = old.len();
    let k = diffusivity / (grid.dx() * grid.dx());
    let mut face = vec![0.0; n + 1];
    for i in 1..n {
        face[i] = k * (old[i] - old[i - 1]);
    }
    for i in 0..n {
        system.rhs[i] = (face[i + 1] - face[i]) + (extra_rhs[i] - extra_diag[i] * old[i]);
    }
    let delta = thomas_solve(&system)?;
    Ok(old.iter().zip(delta).map(|(o, d)| o + d).collect())
}
