//! End-to-end experiments: contraction of transport costs along pairs of
//! solutions, decay towards the invariant measure, a numerical replay of the
//! duality argument, and a closed-form self-test.

mod config;
mod contraction;
mod invariant;
mod replay;
mod report;
mod selftest;

pub use config::{deposit, ExperimentConfig, MeasureSpec, KEYS};
pub use contraction::{run_contraction, ContractionReport, ReportRow, UniquenessCheck};
pub use invariant::{run_invariant, DecayRow, InvariantReport};
pub use replay::{replay_dual_proof, ReplayReport};
pub use report::{plotdata_from_report, REPORT_HEADER};
pub use selftest::{selftest, SelfTestLine};

use crate::costs::CostFn;
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::fp_forward::{
    aligned_dt, evolve_field, measure_from_weights, FaceVelocities, Flux, SolverConfig, Trajectory,
};
use crate::measures::{DiscreteMeasure, Grid};
use crate::ot::{coarsen, Solver, DEFAULT_MAX_SUPPORT};

/// Cost of one transport problem together with its certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub cost: f64,
    pub gap: f64,
    /// Largest displacement introduced by support coarsening.
    pub radius: f64,
}

impl CostEval {
    /// The certificate is accepted when `gap ≤ 1e−9·(1 + cost)`.
    pub fn valid(&self) -> bool {
        self.gap.abs() <= 1e-9 * (1.0 + self.cost.abs())
    }
}

/// Support budget per marginal: `n_max` in 2D, the solver default in 1D.
pub(crate) fn budget(dim: usize, n_max: usize) -> usize {
    if dim == 2 {
        n_max
    } else {
        DEFAULT_MAX_SUPPORT
    }
}

/// Exact transport cost after coarsening each marginal to `budget` points.
pub(crate) fn eval_cost(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    h: &CostFn,
    budget: usize,
) -> Result<CostEval> {
    let c1 = coarsen(mu1, budget)?;
    let c2 = coarsen(mu2, budget)?;
    let r = Solver::default()
        .solve(&c1.measure, &c2.measure, h)
        .map_err(|e| Error::stage("transport", e.to_string()))?;
    Ok(CostEval {
        cost: r.cost,
        gap: r.gap,
        radius: c1.radius.max(c2.radius),
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Time step and storage stride such that every time in `times` is a stored
/// frame. A user step must divide every time exactly.
pub(crate) fn plan_steps(
    grid: &Grid,
    field: &dyn DriftField,
    times: &[f64],
    dt: Option<f64>,
    cfl: f64,
    flux: Flux,
) -> Result<(f64, usize)> {
    let dt = match dt {
        Some(dt) => {
            for &t in times {
                let q = t / dt;
                if (q - q.round()).abs() > 1e-6 {
                    return Err(Error::Config {
                        key: "dt".into(),
                        msg: format!("checkpoint {t} is not a multiple of dt = {dt}"),
                    });
                }
            }
            dt
        }
        None => {
            let faces = if field.is_zero() {
                FaceVelocities::zero(grid, flux)
            } else {
                FaceVelocities::new(grid, field, 0.0, flux)
            };
            aligned_dt(cfl / faces.max_outflow_rate(), 0.0, times)
        }
    };
    let stride = times
        .iter()
        .map(|t| (t / dt).round() as usize)
        .filter(|&k| k > 0)
        .fold(0, gcd)
        .max(1);
    Ok((dt, stride))
}

/// Forward run from `0` to the last of `times`, storing every listed time.
pub(crate) fn run_forward(
    rho0: &DiscreteMeasure,
    field: &dyn DriftField,
    lambda: f64,
    grid: Grid,
    times: &[f64],
    dt: f64,
    stride: usize,
    cfl: f64,
    flux: Flux,
) -> Result<Trajectory> {
    let t_final = times.iter().copied().fold(0.0, f64::max);
    let cfg = SolverConfig::new(grid, dt, t_final)
        .with_stride(stride)
        .with_cfl(cfl)
        .with_flux(flux);
    evolve_field(rho0, field, lambda, &cfg)
        .map_err(|e| Error::stage("forward solve", e.to_string()))
}

/// Normalized measure of a trajectory at a stored time.
pub(crate) fn measure_at(traj: &Trajectory, t: f64) -> Result<DiscreteMeasure> {
    let w = traj.weights_at(t)?;
    measure_from_weights(traj.grid(), &w)
}

/// Diameter of the computational box.
pub(crate) fn box_diameter(grid: &Grid) -> f64 {
    2.0 * grid.half_extent() * (grid.dim() as f64).sqrt()
}

/// Grid with half the cells per axis, for a Richardson-style error estimate.
pub(crate) fn coarse_grid(grid: &Grid) -> Result<Grid> {
    Grid::new(
        grid.dim(),
        grid.half_extent(),
        (grid.cells_per_axis() / 2).max(2),
    )
}

/// Formats a float for report files.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}
