//! Contraction `C_{h_{λt}}(μ¹_t, μ²_t) ≤ C_h(μ¹_0, μ²_0)` along two solutions,
//! with the `e^{−pλt}` decay of `C_h` for homogeneous costs.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{plotdata_from_report, REPORT_HEADER};
use super::{
    box_diameter, budget, coarse_grid, eval_cost, fmt, fmt_opt, measure_at, plan_steps,
    run_forward, CostEval,
};
use crate::costs::{rescale_cost, CostFn};
use crate::drift::{check_lambda_monotone, DriftSpec, MonotonicityReport};
use crate::error::Result;
use crate::fp_forward::{Diagnostics, Trajectory};
use crate::measures::Grid;
use crate::rescale::{rescale_trajectory, TimeMap};

/// Pairs sampled by the monotonicity falsifier.
pub const MONOTONICITY_SAMPLES: usize = 10_000;

/// One checkpoint of a contraction run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    /// `C_{h_{λt}}(μ¹_t, μ²_t)`.
    pub cost_rescaled: f64,
    /// `C_h(μ¹_t, μ²_t)`.
    pub cost_h: f64,
    /// `C_h(μ¹_0, μ²_0)`.
    pub bound: f64,
    /// `e^{−pλt} C_h(μ¹_0, μ²_0)` when `h` is `p`-homogeneous in the needed direction.
    pub decay_bound: Option<f64>,
    /// `(C_h(t)/C_h(0))^{1/p}` for power costs.
    pub ratio: Option<f64>,
    /// `e^{−λt}`, the closed-form value of `ratio` for linear drifts.
    pub expected_ratio: Option<f64>,
    /// Slack allowed on the contraction inequality.
    pub tol: f64,
    /// Slack allowed on the decay and monotonicity inequalities.
    pub tol_h: f64,
    /// `bound + tol − cost_rescaled`; nonnegative on success.
    pub margin: f64,
    pub decay_margin: Option<f64>,
    /// `C_h(t_prev) + tol_h − C_h(t)` for monotone drifts.
    pub monotone_margin: Option<f64>,
    pub gap_rescaled: f64,
    pub gap_h: f64,
    pub gaps_valid: bool,
    pub boundary_mass: f64,
    pub coarsening_radius: f64,
    /// Richardson estimate of the discretization error in `cost_rescaled`.
    pub scheme_error: f64,
    /// `|C_h(σ¹_{s(t)}, σ²_{s(t)}) − cost_rescaled|` after rescaling the trajectories.
    pub frame_diff: f64,
    pub pass: bool,
}

/// Identical initial data solved with two different steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessCheck {
    /// `W₂` between the final states of the two runs.
    pub w2_between_runs: f64,
    /// `W₂` between the final states on the grid and on the once-coarsened grid.
    pub scheme_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub config: ExperimentConfig,
    pub lambda: f64,
    pub homogeneity: Option<f64>,
    pub dt: f64,
    pub rows: Vec<ReportRow>,
    pub diagnostics: [Diagnostics; 2],
    pub uniqueness: Option<UniquenessCheck>,
    /// Sampled falsification test of the claimed `λ`, seeded by `seed`.
    pub monotonicity: MonotonicityReport,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
            && self.uniqueness.is_none_or(|u| u.passed)
            && self.monotonicity.passed
    }

    /// Names of the failed checks, empty on success.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            if r.margin < 0.0 {
                out.push(format!("contraction at t = {}", r.t));
            }
            if r.decay_margin.is_some_and(|m| m < 0.0) {
                out.push(format!("decay at t = {}", r.t));
            }
            if r.monotone_margin.is_some_and(|m| m < 0.0) {
                out.push(format!("monotone decrease at t = {}", r.t));
            }
            if !r.gaps_valid {
                out.push(format!("duality gap at t = {}", r.t));
            }
            if r.frame_diff > 1e-9 * (1.0 + r.cost_rescaled.abs()) {
                out.push(format!("frame equivalence at t = {}", r.t));
            }
        }
        if self.uniqueness.is_some_and(|u| !u.passed) {
            out.push("uniqueness".into());
        }
        if !self.monotonicity.passed {
            out.push("monotonicity".into());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record(&[
                fmt(r.t),
                fmt(r.cost_rescaled),
                fmt(r.cost_h),
                fmt(r.bound),
                fmt_opt(r.decay_bound),
                fmt_opt(r.ratio),
                fmt_opt(r.expected_ratio),
                fmt(r.tol),
                fmt(r.margin),
                fmt_opt(r.decay_margin),
                fmt(r.gap_rescaled),
                fmt(r.gap_h),
                fmt(r.boundary_mass),
                fmt(r.coarsening_radius),
                fmt(r.scheme_error),
                fmt(r.frame_diff),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_diagnostics<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# configuration")?;
        write!(out, "{}", self.config.render())?;
        writeln!(out, "# run")?;
        writeln!(out, "dt = {}", fmt(self.dt))?;
        writeln!(out, "homogeneity = {}", fmt_opt(self.homogeneity))?;
        for (i, d) in self.diagnostics.iter().enumerate() {
            writeln!(out, "# trajectory {}", i + 1)?;
            d.write_text(&mut out)?;
        }
        if let Some(u) = self.uniqueness {
            writeln!(out, "# uniqueness")?;
            writeln!(out, "w2_between_runs = {}", fmt(u.w2_between_runs))?;
            writeln!(out, "scheme_error = {}", fmt(u.scheme_error))?;
            writeln!(out, "passed = {}", u.passed)?;
        }
        writeln!(out, "# monotonicity")?;
        writeln!(out, "samples = {}", self.monotonicity.samples)?;
        writeln!(out, "worst_ratio = {}", fmt(self.monotonicity.worst_ratio))?;
        writeln!(out, "passed = {}", self.monotonicity.passed)?;
        writeln!(out, "# result")?;
        writeln!(out, "passed = {}", self.passed())?;
        for f in self.failures() {
            writeln!(out, "failed = {f}")?;
        }
        Ok(())
    }

    /// Writes `report.csv`, `diagnostics.txt` and `plotdata/*.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let report = dir.join("report.csv");
        self.write_csv(std::fs::File::create(&report)?)?;
        self.write_diagnostics(std::fs::File::create(dir.join("diagnostics.txt"))?)?;
        plotdata_from_report(&report, &dir.join("plotdata"))?;
        Ok(())
    }
}

/// Checkpoints with `0` prepended.
fn with_origin(checkpoints: &[f64]) -> Vec<f64> {
    let mut times = vec![0.0];
    times.extend(checkpoints.iter().copied().filter(|t| *t > 0.0));
    times
}

struct Run {
    traj: [Trajectory; 2],
}

fn run_pair(
    cfg: &ExperimentConfig,
    b: &DriftSpec,
    grid: Grid,
    times: &[f64],
    dt: Option<f64>,
) -> Result<(Run, f64)> {
    let mu1 = cfg.mu1.build(&grid)?;
    let mu2 = cfg.mu2.build(&grid)?;
    let (dt, stride) = plan_steps(&grid, b, times, dt, cfg.cfl, cfg.flux)?;
    let (t1, t2) = rayon::join(
        || {
            run_forward(
                &mu1,
                b,
                b.lambda(),
                grid,
                times,
                dt,
                stride,
                cfg.cfl,
                cfg.flux,
            )
        },
        || {
            run_forward(
                &mu2,
                b,
                b.lambda(),
                grid,
                times,
                dt,
                stride,
                cfg.cfl,
                cfg.flux,
            )
        },
    );
    Ok((Run { traj: [t1?, t2?] }, dt))
}

struct Costs {
    rescaled: CostEval,
    h: CostEval,
}

fn costs_at(run: &Run, t: f64, h: &CostFn, lambda: f64, budget: usize) -> Result<Costs> {
    let m1 = measure_at(&run.traj[0], t)?;
    let m2 = measure_at(&run.traj[1], t)?;
    let h_t = rescale_cost(h, lambda * t);
    let (r, c) = rayon::join(
        || eval_cost(&m1, &m2, &h_t, budget),
        || {
            if lambda == 0.0 {
                Ok(None)
            } else {
                eval_cost(&m1, &m2, h, budget).map(Some)
            }
        },
    );
    let rescaled = r?;
    let h = c?.unwrap_or(rescaled);
    Ok(Costs { rescaled, h })
}

/// Evolves both initial measures and checks contraction at every checkpoint.
pub fn run_contraction(cfg: &ExperimentConfig) -> Result<ContractionReport> {
    let grid = cfg.grid()?;
    let b = cfg.drift_spec()?;
    let h = cfg.cost_fn()?;
    let lambda = b.lambda();
    let times = with_origin(&cfg.checkpoints);
    let budget = budget(grid.dim(), cfg.n_max);

    let (fine, dt) = run_pair(cfg, &b, grid, &times, cfg.dt)?;
    let coarse_g = coarse_grid(&grid)?;
    let (coarse, _) = run_pair(cfg, &b, coarse_g, &times, cfg.dt)?;

    let fine_costs: Vec<Costs> = times
        .par_iter()
        .map(|&t| costs_at(&fine, t, &h, lambda, budget))
        .collect::<Result<_>>()?;
    let coarse_costs: Vec<Costs> = times
        .par_iter()
        .map(|&t| costs_at(&coarse, t, &h, lambda, budget))
        .collect::<Result<_>>()?;

    let map = TimeMap::new(lambda);
    let frame_costs: Vec<f64> = if lambda == 0.0 {
        fine_costs.iter().map(|c| c.rescaled.cost).collect()
    } else {
        let r1 = rescale_trajectory(&fine.traj[0], lambda)?;
        let r2 = rescale_trajectory(&fine.traj[1], lambda)?;
        times
            .par_iter()
            .map(|&t| -> Result<f64> {
                let s = map.s_of_t(t)?;
                Ok(eval_cost(&r1.sigma_at(s)?, &r2.sigma_at(s)?, &h, budget)?.cost)
            })
            .collect::<Result<_>>()?
    };

    let p = if lambda > 0.0 {
        h.homogeneity_exponent(true)
    } else if lambda < 0.0 {
        h.homogeneity_exponent(false)
    } else {
        None
    };
    let power = h.power_exponent();
    let diam = box_diameter(&grid);
    let c0 = &fine_costs[0];
    let err0 = (c0.h.cost - coarse_costs[0].h.cost).abs();
    let linear = matches!(
        b.kind(),
        crate::drift::DriftKind::Linear { .. } | crate::drift::DriftKind::Zero { .. }
    );

    let mut rows = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let fc = &fine_costs[k];
        let cc = &coarse_costs[k];
        let frame_of = |i: usize| {
            fine.traj[i]
                .frame_at(t)
                .map_or(0.0, |f| fine.traj[i].diagnostics().boundary_mass[f])
        };
        let boundary_mass = frame_of(0) + frame_of(1);
        let h_t = rescale_cost(&h, lambda * t);
        let err_r = (fc.rescaled.cost - cc.rescaled.cost).abs();
        let err_h = (fc.h.cost - cc.h.cost).abs();
        let tol = 3.0
            * (err_r
                + err0
                + fc.rescaled.gap.abs()
                + c0.h.gap.abs()
                + boundary_mass * h_t.eval(diam));
        let tol_h =
            3.0 * (err_h + err0 + fc.h.gap.abs() + c0.h.gap.abs() + boundary_mass * h.eval(diam));
        let bound = c0.h.cost;
        let decay_bound = p.map(|p| (-p * lambda * t).exp() * bound);
        let ratio =
            power.and_then(|q| (bound > 0.0).then(|| (fc.h.cost.max(0.0) / bound).powf(1.0 / q)));
        let expected_ratio = (power.is_some() && linear).then(|| (-lambda * t).exp());
        let margin = bound + tol - fc.rescaled.cost;
        let decay_margin = decay_bound.map(|d| d + tol_h - fc.h.cost);
        let monotone_margin =
            (lambda == 0.0 && k > 0).then(|| fine_costs[k - 1].h.cost + tol_h - fc.h.cost);
        let gaps_valid = fc.rescaled.valid() && fc.h.valid();
        let frame_diff = (frame_costs[k] - fc.rescaled.cost).abs();
        let pass = margin >= 0.0
            && decay_margin.is_none_or(|m| m >= 0.0)
            && monotone_margin.is_none_or(|m| m >= 0.0)
            && gaps_valid
            && frame_diff <= 1e-9 * (1.0 + fc.rescaled.cost.abs());
        rows.push(ReportRow {
            t,
            cost_rescaled: fc.rescaled.cost,
            cost_h: fc.h.cost,
            bound,
            decay_bound,
            ratio,
            expected_ratio,
            tol,
            tol_h,
            margin,
            decay_margin,
            monotone_margin,
            gap_rescaled: fc.rescaled.gap,
            gap_h: fc.h.gap,
            gaps_valid,
            boundary_mass,
            coarsening_radius: fc.rescaled.radius.max(fc.h.radius),
            scheme_error: err_r,
            frame_diff,
            pass,
        });
    }

    let uniqueness = if cfg.uniqueness {
        Some(uniqueness_check(
            cfg, &b, &fine, &coarse, &times, dt, budget,
        )?)
    } else {
        None
    };

    Ok(ContractionReport {
        config: cfg.clone(),
        lambda,
        homogeneity: p,
        dt,
        rows,
        diagnostics: [
            fine.traj[0].diagnostics().clone(),
            fine.traj[1].diagnostics().clone(),
        ],
        uniqueness,
        monotonicity: check_lambda_monotone(
            &b,
            lambda,
            MONOTONICITY_SAMPLES,
            grid.half_extent(),
            cfg.seed,
        ),
    })
}

/// Re-solves the first initial measure with half the step and compares.
fn uniqueness_check(
    cfg: &ExperimentConfig,
    b: &DriftSpec,
    fine: &Run,
    coarse: &Run,
    times: &[f64],
    dt: f64,
    budget: usize,
) -> Result<UniquenessCheck> {
    let grid = *fine.traj[0].grid();
    let mu = cfg.mu1.build(&grid)?;
    let (dt2, stride) = plan_steps(&grid, b, times, Some(0.5 * dt), cfg.cfl, cfg.flux)?;
    let other = run_forward(
        &mu,
        b,
        b.lambda(),
        grid,
        times,
        dt2,
        stride,
        cfg.cfl,
        cfg.flux,
    )?;
    let t = *times.last().unwrap_or(&0.0);
    let w2 = CostFn::power(2.0)?;
    let a = measure_at(&fine.traj[0], t)?;
    let between = eval_cost(&a, &measure_at(&other, t)?, &w2, budget)?
        .cost
        .max(0.0)
        .sqrt();
    let scheme = eval_cost(&a, &measure_at(&coarse.traj[0], t)?, &w2, budget)?
        .cost
        .max(0.0)
        .sqrt();
    Ok(UniquenessCheck {
        w2_between_runs: between,
        scheme_error: scheme,
        passed: between <= 2.0 * scheme,
    })
}
