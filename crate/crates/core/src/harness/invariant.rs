//! Exponential decay `C_h(ρ_t, ρ_∞) ≤ e^{−pλ(t−t₀)} C_h(ρ_{t₀}, ρ_∞)` towards
//! the invariant measure of a strongly monotone drift.

use std::io::Write;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::{
    box_diameter, budget, coarse_grid, eval_cost, fmt, fmt_opt, measure_at, plan_steps,
    run_forward, CostEval,
};
use crate::costs::CostFn;
use crate::drift::{DriftField, DriftSpec};
use crate::error::{Error, Result};
use crate::fp_forward::{measure_from_weights, Diagnostics, FaceVelocities, Flux, SolverConfig};
use crate::measures::{
    from_density, gaussian_density, stationary_residual, DiscreteMeasure, Grid, SpaceTimeBump,
};

/// Discrete stationarity residual `‖Pw − w‖₁/Δt` accepted for a computed
/// invariant measure.
pub const STATIONARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    /// `C_h(ρ_t, ρ_∞)`.
    pub cost: f64,
    /// `C_h^{1/p}` for power costs.
    pub distance: Option<f64>,
    /// `e^{−pλ(t−t₀)} C_h(ρ_{t₀}, ρ_∞)` for `t ≥ t₀`.
    pub bound: Option<f64>,
    pub tol: f64,
    pub gap: f64,
    pub scheme_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub lambda: f64,
    pub homogeneity: Option<f64>,
    /// `ρ_∞` came from the closed form `N(0, 1/λ)`.
    pub closed_form: bool,
    /// `‖Pw_∞ − w_∞‖₁/Δt` of the invariant histogram under the scheme.
    pub stationarity_residual: f64,
    /// `∫ (Δζ − B·∇ζ) dρ_∞` for a centered bump `ζ`.
    pub weak_stationarity: f64,
    /// `∫ |B(x) − λx| dρ_∞`.
    pub integrability: f64,
    pub t0: f64,
    /// Least-squares slope of `−log C_h(ρ_t, ρ_∞)` over `t ≥ t₀`.
    pub cost_rate: Option<f64>,
    /// `cost_rate / p`: the decay rate of `C_h^{1/p}`, expected `λ`.
    pub distance_rate: Option<f64>,
    pub rows: Vec<DecayRow>,
    /// Forward-solver diagnostics of the fine run.
    pub diagnostics: Diagnostics,
}

impl InvariantReport {
    /// The fitted cost rate is at least `pλ(1 − 5%)`.
    pub fn rate_ok(&self) -> Option<bool> {
        let p = self.homogeneity?;
        self.cost_rate.map(|r| r >= p * self.lambda * 0.95)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.rate_ok().unwrap_or(true)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "cost",
            "distance",
            "bound",
            "tol",
            "gap",
            "scheme_error",
            "pass",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                fmt(r.t),
                fmt(r.cost),
                fmt_opt(r.distance),
                fmt_opt(r.bound),
                fmt(r.tol),
                fmt(r.gap),
                fmt(r.scheme_error),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_diagnostics<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lambda = {}", fmt(self.lambda))?;
        writeln!(out, "homogeneity = {}", fmt_opt(self.homogeneity))?;
        writeln!(out, "closed_form = {}", self.closed_form)?;
        writeln!(
            out,
            "stationarity_residual = {}",
            fmt(self.stationarity_residual)
        )?;
        writeln!(out, "weak_stationarity = {}", fmt(self.weak_stationarity))?;
        writeln!(out, "integrability = {}", fmt(self.integrability))?;
        writeln!(out, "t0 = {}", fmt(self.t0))?;
        writeln!(out, "cost_rate = {}", fmt_opt(self.cost_rate))?;
        writeln!(out, "distance_rate = {}", fmt_opt(self.distance_rate))?;
        writeln!(
            out,
            "rate_ok = {}",
            self.rate_ok().map_or("n/a".into(), |b| b.to_string())
        )?;
        writeln!(out, "passed = {}", self.passed())?;
        writeln!(out, "# trajectory")?;
        self.diagnostics.write_text(&mut out)?;
        Ok(())
    }

    /// Writes `decay.csv`, `diagnostics.txt` and `plotdata/decay.csv`.
    pub fn write_all(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("plotdata"))?;
        self.write_csv(std::fs::File::create(dir.join("decay.csv"))?)?;
        self.write_diagnostics(std::fs::File::create(dir.join("diagnostics.txt"))?)?;
        let mut w = csv::Writer::from_path(dir.join("plotdata").join("decay.csv"))?;
        w.write_record(["t", "cost", "bound"])?;
        for r in &self.rows {
            w.write_record(&[fmt(r.t), fmt(r.cost), fmt_opt(r.bound)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn residual(grid: &Grid, b: &DriftSpec, w: &[f64], cfl: f64, flux: Flux) -> f64 {
    let faces = FaceVelocities::new(grid, b, 0.0, flux);
    let dt = cfl / faces.max_outflow_rate();
    let mut next = vec![0.0; w.len()];
    faces.forward_step(w, dt, &mut next);
    next.iter().zip(w).map(|(a, b)| (a - b).abs()).sum::<f64>() / dt
}

/// Closed form for `B = λx`, otherwise a long run until the discrete
/// residual drops below [`STATIONARY_TOL`].
fn invariant_measure(
    grid: &Grid,
    b: &DriftSpec,
    start: &DiscreteMeasure,
    cfl: f64,
    flux: Flux,
) -> Result<(DiscreteMeasure, bool, f64)> {
    let lambda = b.lambda();
    if b.centered().is_zero() {
        let mu = from_density(gaussian_density(vec![0.0; grid.dim()], 1.0 / lambda), grid)?;
        let r = residual(grid, b, mu.weights(), cfl, flux);
        return Ok((mu, true, r));
    }
    let chunk = 1.0 / lambda;
    let mut mu = start.clone();
    let mut r = residual(grid, b, mu.weights(), cfl, flux);
    for _ in 0..60 {
        if r < STATIONARY_TOL {
            return Ok((mu, false, r));
        }
        let cfg = SolverConfig::auto(*grid, chunk)
            .with_stride(usize::MAX)
            .with_cfl(cfl)
            .with_flux(flux);
        let traj = crate::fp_forward::evolve(&mu, b, &cfg)?;
        mu = measure_from_weights(grid, &traj.frames()[traj.frames().len() - 1].weights)?;
        r = residual(grid, b, mu.weights(), cfl, flux);
    }
    if r < STATIONARY_TOL {
        Ok((mu, false, r))
    } else {
        Err(Error::InvariantNotConverged(r))
    }
}

struct Table {
    costs: Vec<CostEval>,
    leak: Vec<f64>,
    rho_inf: DiscreteMeasure,
    closed_form: bool,
    residual: f64,
    diagnostics: Diagnostics,
}

fn decay_table(
    cfg: &ExperimentConfig,
    grid: Grid,
    b: &DriftSpec,
    h: &CostFn,
    times: &[f64],
) -> Result<Table> {
    let rho0 = cfg.mu1.build(&grid)?;
    let (rho_inf, closed_form, residual) = invariant_measure(&grid, b, &rho0, cfg.cfl, cfg.flux)?;
    let (dt, stride) = plan_steps(&grid, b, times, cfg.dt, cfg.cfl, cfg.flux)?;
    let traj = run_forward(
        &rho0,
        b,
        b.lambda(),
        grid,
        times,
        dt,
        stride,
        cfg.cfl,
        cfg.flux,
    )?;
    let budget = budget(grid.dim(), cfg.n_max);
    let costs = times
        .par_iter()
        .map(|&t| eval_cost(&measure_at(&traj, t)?, &rho_inf, h, budget))
        .collect::<Result<Vec<_>>>()?;
    let bm_inf: f64 = (0..grid.len())
        .filter(|&k| grid.is_boundary(k))
        .map(|k| rho_inf.weights()[k])
        .sum();
    let leak = times
        .iter()
        .map(|&t| {
            traj.frame_at(t)
                .map_or(0.0, |f| traj.diagnostics().boundary_mass[f])
                + bm_inf
        })
        .collect();
    Ok(Table {
        costs,
        leak,
        rho_inf,
        closed_form,
        residual,
        diagnostics: traj.diagnostics().clone(),
    })
}

/// Decay table towards `ρ_∞` from `ρ₀ = mu1`, with an exponential fit over
/// checkpoints `t ≥ t0`.
pub fn run_invariant(cfg: &ExperimentConfig) -> Result<InvariantReport> {
    let grid = cfg.grid()?;
    let b = cfg.drift_spec()?;
    let lambda = b.lambda();
    if !(lambda > 0.0) {
        return Err(Error::Config {
            key: "lambda".into(),
            msg: "invariant-measure runs need a strongly monotone drift (lambda > 0)".into(),
        });
    }
    let h = cfg.cost_fn()?;
    let mut times = vec![0.0, cfg.t0];
    times.extend(cfg.checkpoints.iter().copied());
    times.sort_by(f64::total_cmp);
    times.dedup();

    let (fine, coarse) = rayon::join(
        || decay_table(cfg, grid, &b, &h, &times),
        || decay_table(cfg, coarse_grid(&grid)?, &b, &h, &times),
    );
    let (fine, coarse) = (fine?, coarse?);

    let p = h.homogeneity_exponent(true);
    let power = h.power_exponent();
    let diam = box_diameter(&grid);
    let k0 = times.iter().position(|&t| t == cfg.t0).unwrap_or(0);
    let err = |k: usize| (fine.costs[k].cost - coarse.costs[k].cost).abs();
    let c_t0 = fine.costs[k0];

    let mut rows = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let c = fine.costs[k];
        let tol = 3.0
            * (err(k)
                + err(k0)
                + c.gap.abs()
                + c_t0.gap.abs()
                + (fine.leak[k] + fine.leak[k0]) * h.eval(diam));
        let bound = match p {
            Some(p) if t >= cfg.t0 => Some((-p * lambda * (t - cfg.t0)).exp() * c_t0.cost),
            _ => None,
        };
        let pass = c.valid() && bound.is_none_or(|bd| c.cost <= bd + tol);
        rows.push(DecayRow {
            t,
            cost: c.cost,
            distance: power.map(|q| c.cost.max(0.0).powf(1.0 / q)),
            bound,
            tol,
            gap: c.gap,
            scheme_error: err(k),
            pass,
        });
    }

    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t >= cfg.t0 && r.cost > 0.0)
        .map(|r| (r.t, r.cost.ln()))
        .collect();
    let cost_rate = (fit.len() >= 2).then(|| -slope(&fit));
    let distance_rate = match (cost_rate, p) {
        (Some(r), Some(p)) => Some(r / p),
        _ => None,
    };

    let d = grid.dim();
    let mut bx = vec![0.0; d];
    let integrability = fine.rho_inf.integrate(|x| {
        b.eval(x, 0.0, &mut bx);
        (0..d)
            .map(|a| (bx[a] - lambda * x[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    let bump = SpaceTimeBump {
        center: vec![0.0; d],
        radius: 0.5 * grid.half_extent(),
        t_center: 1.0,
        t_radius: 0.5,
    };
    let weak_stationarity = stationary_residual(&fine.rho_inf, &bump, &b);

    Ok(InvariantReport {
        lambda,
        homogeneity: p,
        closed_form: fine.closed_form,
        stationarity_residual: fine.residual,
        weak_stationarity,
        integrability,
        t0: cfg.t0,
        cost_rate,
        distance_rate,
        rows,
        diagnostics: fine.diagnostics,
    })
}

/// Least-squares slope of `y` against `x`.
fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
