//! Explicit conservative finite-volume solver for `∂_tρ = Δρ + div(ρB)` on a
//! box with no-flux walls.
//!
//! Mass moves with velocity `v = −B`. Across each interior face between cells
//! `L` and `R` the mass flux is
//! `F = (v⁺ + 1/Δx)·w_L/Δx − ((−v)⁺ + 1/Δx)·w_R/Δx`,
//! with `v` evaluated at the face. Each cell update is a convex combination of
//! its neighbours whenever `dt · Σ_faces (outflow rate) ≤ 1`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::drift::{DriftField, DriftSpec};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Grid};
use crate::rescale::TimeMap;

/// Boundary-layer mass above which a run is flagged.
pub const BOUNDARY_WARN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub grid: Grid,
    /// Step size; `None` selects the largest admissible step.
    pub dt: Option<f64>,
    pub t_start: f64,
    pub t_final: f64,
    pub cfl_safety: f64,
    pub flux: Flux,
    /// Store every `stride`-th step (the final step is always stored).
    pub stride: usize,
}

impl SolverConfig {
    pub fn new(grid: Grid, dt: f64, t_final: f64) -> Self {
        Self {
            grid,
            dt: Some(dt),
            t_start: 0.0,
            t_final,
            cfl_safety: 0.9,
            flux: Flux::default(),
            stride: 1,
        }
    }

    pub fn auto(grid: Grid, t_final: f64) -> Self {
        Self {
            dt: None,
            ..Self::new(grid, 0.0, t_final)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn with_start(mut self, t_start: f64) -> Self {
        self.t_start = t_start;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl_safety = cfl;
        self
    }

    pub fn with_flux(mut self, flux: Flux) -> Self {
        self.flux = flux;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::invalid(format!(
                "cfl safety {} not in (0, 1]",
                self.cfl_safety
            )));
        }
        if !(self.t_final >= self.t_start) {
            return Err(Error::invalid("final time precedes start time"));
        }
        Ok(())
    }
}

/// Numerical flux across a face with velocity `v` and unit diffusion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Flux {
    /// Upwind drift plus centered diffusion:
    /// `F = (v⁺ + 1/Δx) w_L − ((−v)⁺ + 1/Δx) w_R`.
    Upwind,
    /// Exponential fitting (Scharfetter–Gummel):
    /// `F = (Bern(−vΔx) w_L − Bern(vΔx) w_R)/Δx` with `Bern(z) = z/(e^z − 1)`.
    /// Exact for constant velocity at steady state; second order in `Δx`.
    #[default]
    ExponentialFitting,
}

impl Flux {
    /// Coefficients `(a, b)` with `F = a w_L − b w_R`.
    pub fn coefficients(self, v: f64, dx: f64) -> (f64, f64) {
        match self {
            Flux::Upwind => (v.max(0.0) + 1.0 / dx, (-v).max(0.0) + 1.0 / dx),
            Flux::ExponentialFitting => (bernoulli(-v * dx) / dx, bernoulli(v * dx) / dx),
        }
    }
}

/// `z/(e^z − 1)`, with value `1` at `z = 0`.
pub fn bernoulli(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else if z > 700.0 {
        0.0
    } else {
        z / z.exp_m1()
    }
}

/// Face velocities `v = −B` of a frozen field on a grid, with the flux
/// coefficients of the chosen scheme.
#[derive(Debug, Clone)]
pub struct FaceVelocities {
    grid: Grid,
    /// x-faces: row `j`, face between `i` and `i+1` at `j(n−1) + i`.
    vx: Vec<f64>,
    /// y-faces: column `i`, face between `j` and `j+1` at `j n + i`.
    vy: Vec<f64>,
    cx: Vec<(f64, f64)>,
    cy: Vec<(f64, f64)>,
}

impl FaceVelocities {
    pub fn new(grid: &Grid, field: &dyn DriftField, s: f64, flux: Flux) -> Self {
        let n = grid.cells_per_axis();
        let d = grid.dim();
        let dx = grid.dx();
        let l = grid.half_extent();
        let rows = if d == 1 { 1 } else { n };
        let vx: Vec<f64> = (0..rows * (n - 1))
            .into_par_iter()
            .map(|k| {
                let (j, i) = (k / (n - 1), k % (n - 1));
                let mut x = [-l + (i + 1) as f64 * dx, 0.0];
                if d == 2 {
                    x[1] = grid.center(j);
                }
                let mut b = [0.0; 2];
                field.eval(&x[..d], s, &mut b[..d]);
                -b[0]
            })
            .collect();
        let vy: Vec<f64> = if d == 2 {
            (0..(n - 1) * n)
                .into_par_iter()
                .map(|k| {
                    let (j, i) = (k / n, k % n);
                    let x = [grid.center(i), -l + (j + 1) as f64 * dx];
                    let mut b = [0.0; 2];
                    field.eval(&x, s, &mut b);
                    -b[1]
                })
                .collect()
        } else {
            Vec::new()
        };
        Self::from_velocities(grid, vx, vy, flux)
    }

    pub fn zero(grid: &Grid, flux: Flux) -> Self {
        let n = grid.cells_per_axis();
        let rows = if grid.dim() == 1 { 1 } else { n };
        let vy = if grid.dim() == 2 {
            vec![0.0; (n - 1) * n]
        } else {
            Vec::new()
        };
        Self::from_velocities(grid, vec![0.0; rows * (n - 1)], vy, flux)
    }

    fn from_velocities(grid: &Grid, vx: Vec<f64>, vy: Vec<f64>, flux: Flux) -> Self {
        let dx = grid.dx();
        let cx = vx.iter().map(|&v| flux.coefficients(v, dx)).collect();
        let cy = vy.iter().map(|&v| flux.coefficients(v, dx)).collect();
        Self {
            grid: *grid,
            vx,
            vy,
            cx,
            cy,
        }
    }

    /// Largest `|v|` over all faces.
    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .chain(&self.vy)
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest total outflow rate of any cell; steps with
    /// `dt · rate ≤ 1` keep the update monotone.
    pub fn max_outflow_rate(&self) -> f64 {
        let n = self.grid.cells_per_axis();
        let dx = self.grid.dx();
        (0..self.grid.len())
            .map(|k| {
                let [i, j] = self.grid.index(k);
                let mut r = 0.0;
                if i + 1 < n {
                    r += self.cx[j * (n - 1) + i].0;
                }
                if i > 0 {
                    r += self.cx[j * (n - 1) + i - 1].1;
                }
                if self.grid.dim() == 2 {
                    if j + 1 < n {
                        r += self.cy[j * n + i].0;
                    }
                    if j > 0 {
                        r += self.cy[(j - 1) * n + i].1;
                    }
                }
                r / dx
            })
            .fold(0.0, f64::max)
    }

    /// One forward step `w ↦ P w`.
    pub fn forward_step(&self, w: &[f64], dt: f64, out: &mut [f64]) {
        let n = self.grid.cells_per_axis();
        let r = dt / self.grid.dx();
        let d2 = self.grid.dim() == 2;
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let (i, j) = if d2 { (k % n, k / n) } else { (k, 0) };
            let mut acc = 0.0;
            // flux through face (L → R)
            let flux = |c: (f64, f64), wl: f64, wr: f64| c.0 * wl - c.1 * wr;
            if i > 0 {
                acc += flux(self.cx[j * (n - 1) + i - 1], w[k - 1], w[k]);
            }
            if i + 1 < n {
                acc -= flux(self.cx[j * (n - 1) + i], w[k], w[k + 1]);
            }
            if d2 {
                if j > 0 {
                    acc += flux(self.cy[(j - 1) * n + i], w[k - n], w[k]);
                }
                if j + 1 < n {
                    acc -= flux(self.cy[j * n + i], w[k], w[k + n]);
                }
            }
            *o = w[k] + r * acc;
        });
    }

    /// One adjoint step `φ ↦ Pᵀφ`, so that `Σ φ·(P w) = Σ (Pᵀφ)·w`.
    pub fn adjoint_step(&self, phi: &[f64], dt: f64, out: &mut [f64]) {
        let n = self.grid.cells_per_axis();
        let r = dt / self.grid.dx();
        let d2 = self.grid.dim() == 2;
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let (i, j) = if d2 { (k % n, k / n) } else { (k, 0) };
            let mut acc = 0.0;
            if i + 1 < n {
                acc += self.cx[j * (n - 1) + i].0 * (phi[k + 1] - phi[k]);
            }
            if i > 0 {
                acc += self.cx[j * (n - 1) + i - 1].1 * (phi[k - 1] - phi[k]);
            }
            if d2 {
                if j + 1 < n {
                    acc += self.cy[j * n + i].0 * (phi[k + n] - phi[k]);
                }
                if j > 0 {
                    acc += self.cy[(j - 1) * n + i].1 * (phi[k - n] - phi[k]);
                }
            }
            *o = phi[k] + r * acc;
        });
    }
}

/// Stored solution at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub steps: usize,
    pub dt: f64,
    pub max_mass_drift: f64,
    pub min_weight: f64,
    /// Mass in the outermost cell layer, per stored frame.
    pub boundary_mass: Vec<f64>,
    /// `∫∫ |B − λx| dρ_t dt` by the trapezoid rule over stored frames.
    pub summability: f64,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn max_boundary_mass(&self) -> f64 {
        self.boundary_mass.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "steps = {}", self.steps)?;
        writeln!(out, "dt = {:.12e}", self.dt)?;
        writeln!(
            out,
            "max_mass_drift_per_step = {:.12e}",
            self.max_mass_drift
        )?;
        writeln!(out, "min_weight = {:.12e}", self.min_weight)?;
        writeln!(out, "max_boundary_mass = {:.12e}", self.max_boundary_mass())?;
        writeln!(out, "summability = {:.12e}", self.summability)?;
        for w in &self.warnings {
            writeln!(out, "warning = {w}")?;
        }
        Ok(())
    }
}

/// Time-indexed grid histograms produced by the solver.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: Grid,
    frames: Vec<Frame>,
    config: SolverConfig,
    diagnostics: Diagnostics,
}

impl Trajectory {
    /// A trajectory that stays at `weights` for all listed times.
    pub fn constant(grid: Grid, weights: Vec<f64>, times: &[f64]) -> Self {
        let frames = times
            .iter()
            .map(|&t| Frame {
                t,
                weights: weights.clone(),
            })
            .collect();
        let t0 = times.first().copied().unwrap_or(0.0);
        let t1 = times.last().copied().unwrap_or(0.0);
        Self {
            grid,
            frames,
            config: SolverConfig::new(grid, 0.0, t1).with_start(t0),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn dt(&self) -> f64 {
        self.diagnostics.dt
    }

    /// Frame `k` as a probability measure on the cell centers.
    pub fn measure(&self, k: usize) -> Result<DiscreteMeasure> {
        measure_from_weights(&self.grid, &self.frames[k].weights)
    }

    pub fn final_measure(&self) -> Result<DiscreteMeasure> {
        self.measure(self.frames.len() - 1)
    }

    /// Index of the stored frame at time `t`, if any.
    pub fn frame_at(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + t.abs());
        self.frames.iter().position(|f| (f.t - t).abs() <= tol)
    }

    /// Weights at `t`, linearly interpolated between stored frames.
    pub fn weights_at(&self, t: f64) -> Result<Vec<f64>> {
        if let Some(k) = self.frame_at(t) {
            return Ok(self.frames[k].weights.clone());
        }
        let (first, last) = (self.frames[0].t, self.frames[self.frames.len() - 1].t);
        if !(t >= first && t <= last) {
            return Err(Error::invalid(format!(
                "time {t} outside trajectory range [{first}, {last}]"
            )));
        }
        let k = self.frames.partition_point(|f| f.t <= t);
        let (a, b) = (&self.frames[k - 1], &self.frames[k]);
        let theta = (t - a.t) / (b.t - a.t);
        Ok(a.weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| (1.0 - theta) * x + theta * y)
            .collect())
    }

    /// Writes `t,x[,y],w` rows for every stored frame.
    pub fn write_frames_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.grid.dim();
        if d == 1 {
            w.write_record(["t", "x", "w"])?;
        } else {
            w.write_record(["t", "x", "y", "w"])?;
        }
        let pts = self.grid.points();
        for fr in &self.frames {
            for k in 0..self.grid.len() {
                let mut rec = vec![format!("{:.12e}", fr.t)];
                rec.extend(pts[k * d..(k + 1) * d].iter().map(|c| format!("{c:.12e}")));
                rec.push(format!("{:.17e}", fr.weights[k]));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_frames_csv(&self, path: &Path) -> Result<()> {
        self.write_frames_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn measure_from_weights(grid: &Grid, w: &[f64]) -> Result<DiscreteMeasure> {
    let total: f64 = w.iter().sum();
    DiscreteMeasure::on_grid(grid, w.iter().map(|x| x / total).collect())
}

/// Largest step with `dt · (2d/Δx² + 2d·speed/Δx) ≤ cfl`.
pub fn admissible_dt(grid: &Grid, max_speed: f64, cfl: f64) -> f64 {
    let d = grid.dim() as f64;
    let dx = grid.dx();
    cfl / (2.0 * d / (dx * dx) + 2.0 * d * max_speed / dx)
}

/// Largest `dt ≤ dt_max` such that every time in `times` (measured from
/// `t_start`) is an integer number of steps.
pub fn aligned_dt(dt_max: f64, t_start: f64, times: &[f64]) -> f64 {
    let span = times.iter().map(|t| t - t_start).fold(0.0, f64::max);
    if span <= 0.0 {
        return dt_max;
    }
    let mut k = (span / dt_max).ceil().max(1.0) as u64;
    loop {
        let dt = span / k as f64;
        let ok = times.iter().all(|t| {
            let q = (t - t_start) / dt;
            (q - q.round()).abs() < 1e-9
        });
        if ok || k > 50_000_000 {
            return dt;
        }
        k += 1;
    }
}

fn sup_speed(grid: &Grid, field: &dyn DriftField, s: f64) -> f64 {
    FaceVelocities::new(grid, field, s, Flux::Upwind).max_speed()
}

/// Solves the forward equation for the drift `b`.
pub fn evolve(rho0: &DiscreteMeasure, b: &DriftSpec, cfg: &SolverConfig) -> Result<Trajectory> {
    evolve_field(rho0, b, b.lambda(), cfg)
}

/// Solves the forward equation for an arbitrary field; `lambda` enters only
/// the summability diagnostic.
pub fn evolve_field(
    rho0: &DiscreteMeasure,
    field: &dyn DriftField,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = cfg.grid;
    if rho0.len() != grid.len() || rho0.points() != grid.points().as_slice() {
        return Err(Error::invalid(
            "initial measure does not live on the solver grid",
        ));
    }
    if field.dim() != grid.dim() {
        return Err(Error::invalid("drift and grid dimensions differ"));
    }
    let span = cfg.t_final - cfg.t_start;
    let autonomous = field.is_autonomous();
    let mut faces = if field.is_zero() {
        FaceVelocities::zero(&grid, cfg.flux)
    } else {
        FaceVelocities::new(&grid, field, cfg.t_start, cfg.flux)
    };
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => {
            let mut speed = sup_speed(&grid, field, cfg.t_start);
            if !autonomous {
                speed = speed.max(sup_speed(&grid, field, cfg.t_final));
            }
            let dt_max = admissible_dt(&grid, speed, cfg.cfl_safety);
            aligned_dt(dt_max, cfg.t_start, &[cfg.t_final])
        }
    };
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step {dt} must be positive")));
    }
    let steps_f = span / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "time span {span} is not a multiple of dt = {dt}"
        )));
    }
    let check_cfl = |faces: &FaceVelocities| -> Result<()> {
        let rate = faces.max_outflow_rate();
        if dt * rate > cfg.cfl_safety * (1.0 + 1e-12) {
            return Err(Error::CflViolated {
                dt,
                admissible: cfg.cfl_safety / rate,
            });
        }
        Ok(())
    };
    check_cfl(&faces)?;

    let mut w = rho0.weights().to_vec();
    let mut next = vec![0.0; w.len()];
    let mut frames = vec![Frame {
        t: cfg.t_start,
        weights: w.clone(),
    }];
    let mut diag = Diagnostics {
        dt,
        min_weight: w.iter().copied().fold(f64::INFINITY, f64::min),
        ..Diagnostics::default()
    };
    for step in 0..steps {
        if !autonomous && step > 0 {
            faces = FaceVelocities::new(&grid, field, cfg.t_start + step as f64 * dt, cfg.flux);
            check_cfl(&faces)?;
        }
        faces.forward_step(&w, dt, &mut next);
        let before: f64 = w.iter().sum();
        let after: f64 = next.iter().sum();
        diag.max_mass_drift = diag.max_mass_drift.max((after - before).abs());
        diag.min_weight = next.iter().copied().fold(diag.min_weight, f64::min);
        std::mem::swap(&mut w, &mut next);
        if (step + 1) % cfg.stride == 0 || step + 1 == steps {
            frames.push(Frame {
                t: cfg.t_start + (step + 1) as f64 * dt,
                weights: w.clone(),
            });
        }
    }
    diag.steps = steps;
    diag.boundary_mass = frames
        .iter()
        .map(|f| {
            (0..grid.len())
                .filter(|&k| grid.is_boundary(k))
                .map(|k| f.weights[k])
                .sum()
        })
        .collect();
    if diag.max_boundary_mass() > BOUNDARY_WARN {
        diag.warnings.push(format!(
            "domain too small: boundary mass {:.3e} exceeds {BOUNDARY_WARN:e}",
            diag.max_boundary_mass()
        ));
    }
    diag.summability = summability(&grid, &frames, field, lambda);
    Ok(Trajectory {
        grid,
        frames,
        config: SolverConfig {
            dt: Some(dt),
            ..*cfg
        },
        diagnostics: diag,
    })
}

fn summability(grid: &Grid, frames: &[Frame], field: &dyn DriftField, lambda: f64) -> f64 {
    let d = grid.dim();
    let pts = grid.points();
    let vals: Vec<f64> = frames
        .iter()
        .map(|f| {
            let mut b = vec![0.0; d];
            let mut acc = 0.0;
            for k in 0..grid.len() {
                if f.weights[k] == 0.0 {
                    continue;
                }
                let x = &pts[k * d..(k + 1) * d];
                field.eval(x, f.t, &mut b);
                let a = (0..d)
                    .map(|i| (b[i] - lambda * x[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                acc += f.weights[k] * a;
            }
            acc
        })
        .collect();
    (1..frames.len())
        .map(|k| 0.5 * (frames[k].t - frames[k - 1].t) * (vals[k] + vals[k - 1]))
        .sum()
}

/// Solves `∂_sσ = Δσ + div(σÃ)` on `[cfg.t_start, cfg.t_final] ⊂ [0, S_∞)`
/// for the rescaled field `Ã` of `map`.
pub fn evolve_rescaled(
    sigma0: &DiscreteMeasure,
    rescaled: &dyn DriftField,
    map: TimeMap,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    if cfg.t_final >= map.s_inf() || cfg.t_start < 0.0 {
        return Err(Error::RescaledTimeOutOfRange {
            s: cfg.t_final,
            s_inf: map.s_inf(),
        });
    }
    evolve_field(sigma0, rescaled, 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{from_density, gaussian_density};

    #[test]
    fn hand_stencil_on_four_cells() {
        let grid = Grid::new(1, 1.0, 4).unwrap();
        let field = DriftSpec::linear(1, vec![0.0], vec![1.0], 0.0).unwrap();
        // B ≡ 1 ⇒ v ≡ −1: mass drifts left
        let w0 = vec![0.1, 0.2, 0.3, 0.4];
        let mu = DiscreteMeasure::on_grid(&grid, w0.clone()).unwrap();
        let dt = 0.01;
        let cfg = SolverConfig::new(grid, dt, dt).with_flux(Flux::Upwind);
        let traj = evolve(&mu, &field, &cfg).unwrap();
        let w1 = &traj.frames()[1].weights;
        let dx = 0.5;
        let inv = 1.0 / dx;
        // F_{i+1/2} = (1/dx) w_i − (1 + 1/dx) w_{i+1}
        let f = |l: f64, r: f64| inv * l - (1.0 + inv) * r;
        let fl = [0.0, f(w0[0], w0[1]), f(w0[1], w0[2]), f(w0[2], w0[3]), 0.0];
        for i in 0..4 {
            let expect = w0[i] + dt / dx * (fl[i] - fl[i + 1]);
            assert!((w1[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn exponential_fitting_stencil_on_four_cells() {
        let grid = Grid::new(1, 1.0, 4).unwrap();
        let field = DriftSpec::linear(1, vec![0.0], vec![1.0], 0.0).unwrap();
        let w0 = vec![0.1, 0.2, 0.3, 0.4];
        let mu = DiscreteMeasure::on_grid(&grid, w0.clone()).unwrap();
        let dt = 0.01;
        let traj = evolve(&mu, &field, &SolverConfig::new(grid, dt, dt)).unwrap();
        let w1 = &traj.frames()[1].weights;
        let dx: f64 = 0.5;
        // v = −1: Bern(vΔx) = Bern(−1/2), Bern(−vΔx) = Bern(1/2)
        let bern = |z: f64| z / (z.exp() - 1.0);
        let f = |l: f64, r: f64| (bern(0.5) * l - bern(-0.5) * r) / dx;
        let fl = [0.0, f(w0[0], w0[1]), f(w0[1], w0[2]), f(w0[2], w0[3]), 0.0];
        for i in 0..4 {
            let expect = w0[i] + dt / dx * (fl[i] - fl[i + 1]);
            assert!((w1[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-9) - (1.0 - 0.5e-9)).abs() < 1e-15);
        for z in [0.3, 2.0, 40.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-12 * (1.0 + z));
        }
        assert_eq!(bernoulli(800.0), 0.0);
    }

    #[test]
    fn cfl_violation_reports_admissible_step() {
        let grid = Grid::new(1, 1.0, 16).unwrap();
        let mu = from_density(|_| 1.0, &grid).unwrap();
        let err = evolve(&mu, &DriftSpec::zero(1), &SolverConfig::new(grid, 0.1, 0.1)).unwrap_err();
        match err {
            Error::CflViolated { admissible, .. } => assert!(admissible < 0.1 && admissible > 0.0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn adjoint_pairs_exactly() {
        let grid = Grid::new(2, 2.0, 12).unwrap();
        let b = DriftSpec::rotation(1.3);
        for flux in [Flux::Upwind, Flux::ExponentialFitting] {
            let faces = FaceVelocities::new(&grid, &b, 0.0, flux);
            let w: Vec<f64> = (0..grid.len())
                .map(|k| ((k * 7 % 13) as f64) / 13.0)
                .collect();
            let phi: Vec<f64> = (0..grid.len())
                .map(|k| ((k * 5 % 11) as f64).sin())
                .collect();
            let dt = 0.5 / faces.max_outflow_rate();
            let mut pw = vec![0.0; w.len()];
            let mut ptphi = vec![0.0; w.len()];
            faces.forward_step(&w, dt, &mut pw);
            faces.adjoint_step(&phi, dt, &mut ptphi);
            let lhs: f64 = phi.iter().zip(&pw).map(|(a, b)| a * b).sum();
            let rhs: f64 = ptphi.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn aligned_step_hits_checkpoints() {
        let dt = aligned_dt(0.0013, 0.0, &[0.25, 0.5, 1.0]);
        assert!(dt <= 0.0013);
        for t in [0.25, 0.5, 1.0] {
            let q = t / dt;
            assert!((q - q.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_mass_is_conserved() {
        let grid = Grid::new(1, 6.0, 120).unwrap();
        let mu = from_density(gaussian_density(vec![0.0], 0.5), &grid).unwrap();
        let traj = evolve(
            &mu,
            &DriftSpec::ou(1, 1.0),
            &SolverConfig::auto(grid, 0.5).with_stride(10),
        )
        .unwrap();
        let d = traj.diagnostics();
        assert!(d.max_mass_drift <= 1e-12 && d.min_weight >= 0.0);
        assert!(d.summability == 0.0);
        assert!(d.warnings.is_empty());
    }
}
