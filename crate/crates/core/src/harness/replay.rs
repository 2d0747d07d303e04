//! Numerical replay of the duality argument: rescale, take optimal duals at
//! `s₁`, smooth them into an admissible compactly supported pair, transport
//! them backward with `Ã_{n,m}` and verify
//! `Σ(s₁) ≤ Σ(s₀) + ℓK_{n,m} ≤ C_h(σ¹_{s₀}, σ²_{s₀}) + ℓK_{n,m}`.

use std::io::Write;
use std::sync::Arc;

use super::config::ExperimentConfig;
use super::{budget, eval_cost, fmt, measure_at, plan_steps, run_forward};
use crate::backward::{
    check_constraint_pair, knm_error, pairing_sigma, solve_backward, BoundsReport, KnmEntry,
};
use crate::costs::{h_transform_between, CostFn};
use crate::drift::{ladder, ApproxParams, DriftField, Rescaled};
use crate::error::{Error, Result};
use crate::fp_forward::{Diagnostics, SolverConfig};
use crate::measures::Grid;
use crate::ot::{coarsen, Solver};
use crate::quadrature::bump;
use crate::rescale::TimeMap;

/// Roundoff allowed on constraints that hold exactly by construction.
const ROUNDOFF: f64 = 1e-11;

/// Outcome of one stage of the replay.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub lambda: f64,
    pub t_final: f64,
    pub s1: f64,
    /// Ladder level used for the backward solve.
    pub n: usize,
    pub m: usize,
    pub lp_cost_s1: f64,
    pub lp_gap_s1: f64,
    /// `∫φ¹dσ¹ + ∫φ²dσ²` of the tightened grid potentials at `s₁`.
    pub tightened_value: f64,
    pub eta: f64,
    pub delta_eta: f64,
    pub cutoff_r0: f64,
    pub cutoff_r: f64,
    pub sigma_s1: f64,
    pub sigma_s0: f64,
    pub cost_s0: f64,
    pub gap_s0: f64,
    pub violation_s1: f64,
    pub violation_s0: f64,
    /// `ℓ`: largest discrete Lipschitz constant of the two dual solutions.
    pub lipschitz: f64,
    pub knm: Vec<KnmEntry>,
    pub k_used: f64,
    /// `Σ(s₀) + ℓK − Σ(s₁)`.
    pub transport_slack: f64,
    /// `C_h(σ_{s₀}) − Σ(s₀)`.
    pub duality_slack: f64,
    /// `C_h(σ_{s₀}) + ℓK − Σ(s₁)`.
    pub chain_slack: f64,
    pub bounds: [BoundsReport; 2],
    pub stages: Vec<StageRecord>,
    /// Forward-solver diagnostics of both trajectories.
    pub diagnostics: [Diagnostics; 2],
}

impl ReplayReport {
    /// `K_{n,m}` strictly decreasing along `n` for the largest `m`.
    pub fn knm_decreasing(&self) -> bool {
        let m = self.knm.iter().map(|e| e.m).max().unwrap_or(0);
        let ks: Vec<f64> = self.knm.iter().filter(|e| e.m == m).map(|e| e.k).collect();
        ks.windows(2).all(|w| w[1] < w[0])
    }

    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.passed)
    }

    /// The first failed stage as a structured error.
    pub fn check(&self) -> Result<()> {
        match self.stages.iter().find(|s| !s.passed) {
            None => Ok(()),
            Some(s) => Err(Error::stage(
                s.stage,
                format!(
                    "value {:.6e} exceeds tolerance {:.6e}",
                    s.value, s.tolerance
                ),
            )),
        }
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}");
        kv("lambda", fmt(self.lambda))?;
        kv("T", fmt(self.t_final))?;
        kv("s1", fmt(self.s1))?;
        kv("n", self.n.to_string())?;
        kv("m", self.m.to_string())?;
        kv("lp_cost_s1", fmt(self.lp_cost_s1))?;
        kv("lp_gap_s1", fmt(self.lp_gap_s1))?;
        kv("tightened_value", fmt(self.tightened_value))?;
        kv("eta", fmt(self.eta))?;
        kv("delta_eta", fmt(self.delta_eta))?;
        kv("cutoff_r0", fmt(self.cutoff_r0))?;
        kv("cutoff_r", fmt(self.cutoff_r))?;
        kv("sigma_s1", fmt(self.sigma_s1))?;
        kv("sigma_s0", fmt(self.sigma_s0))?;
        kv("cost_s0", fmt(self.cost_s0))?;
        kv("gap_s0", fmt(self.gap_s0))?;
        kv("violation_s1", fmt(self.violation_s1))?;
        kv("violation_s0", fmt(self.violation_s0))?;
        kv("lipschitz", fmt(self.lipschitz))?;
        kv("k_used", fmt(self.k_used))?;
        kv("transport_slack", fmt(self.transport_slack))?;
        kv("duality_slack", fmt(self.duality_slack))?;
        kv("chain_slack", fmt(self.chain_slack))?;
        kv("knm_decreasing", self.knm_decreasing().to_string())?;
        for e in &self.knm {
            kv(&format!("knm[{},{}]", e.n, e.m), fmt(e.k))?;
        }
        for s in &self.stages {
            kv(
                &format!("stage.{}", s.stage),
                format!(
                    "{} value={} tol={}",
                    if s.passed { "ok" } else { "FAILED" },
                    fmt(s.value),
                    fmt(s.tolerance)
                ),
            )?;
        }
        kv("passed", self.passed().to_string())?;
        Ok(())
    }

    /// Writes `replay.txt`, `diagnostics.txt` and `plotdata/knm.csv`.
    pub fn write_all(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("plotdata"))?;
        self.write_text(std::fs::File::create(dir.join("replay.txt"))?)?;
        let mut diag = std::fs::File::create(dir.join("diagnostics.txt"))?;
        for (i, d) in self.diagnostics.iter().enumerate() {
            writeln!(diag, "# trajectory {}", i + 1)?;
            d.write_text(&mut diag)?;
        }
        let mut w = csv::Writer::from_path(dir.join("plotdata").join("knm.csv"))?;
        w.write_record(["n", "m", "k"])?;
        for e in &self.knm {
            w.write_record(&[e.n.to_string(), e.m.to_string(), fmt(e.k)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn stage(name: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::stage(name, e.to_string())
}

/// Discrete convolution with a normalized bump of radius `eta`, truncated
/// and renormalized at the box boundary.
fn mollify(grid: &Grid, phi: &[f64], eta: f64) -> Vec<f64> {
    let n = grid.cells_per_axis() as isize;
    let dx = grid.dx();
    let r = (eta / dx).ceil() as isize;
    let d = grid.dim();
    let offsets: Vec<(isize, isize, f64)> = if d == 1 {
        (-r..=r)
            .map(|i| (i, 0, bump((i as f64 * dx / eta).powi(2))))
            .filter(|o| o.2 > 0.0)
            .collect()
    } else {
        (-r..=r)
            .flat_map(|j| (-r..=r).map(move |i| (i, j)))
            .map(|(i, j)| (i, j, bump(((i * i + j * j) as f64) * dx * dx / (eta * eta))))
            .filter(|o| o.2 > 0.0)
            .collect()
    };
    (0..grid.len())
        .map(|k| {
            let [ci, cj] = grid.index(k);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for &(oi, oj, w) in &offsets {
                let (i, j) = (ci as isize + oi, cj as isize + oj);
                if i < 0 || i >= n || (d == 2 && (j < 0 || j >= n)) {
                    continue;
                }
                let kk = if d == 1 {
                    i as usize
                } else {
                    grid.flat(i as usize, j as usize)
                };
                acc += w * phi[kk];
                wsum += w;
            }
            acc / wsum
        })
        .collect()
}

/// Smooth cutoff: `1` on `|u| ≤ 1/2`, `0` on `|u| ≥ 1`.
fn chi(u: f64) -> f64 {
    let f = |v: f64| if v > 0.0 { (-1.0 / v).exp() } else { 0.0 };
    if u <= 0.5 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (u - 0.5);
        f(1.0 - s) / (f(1.0 - s) + f(s))
    }
}

/// Smallest `R₀` (to 1e−9 relative) with `h(r) ≥ level` for all `r ≥ R₀`.
fn cutoff_radius(h: &CostFn, level: f64) -> Option<f64> {
    if level <= 0.0 {
        return Some(0.0);
    }
    let mut hi = 1.0;
    while h.eval(hi) < level {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if h.eval(mid) >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Replays the duality argument on `[0, T]` with `T = cfg.t_final`.
pub fn replay_dual_proof(cfg: &ExperimentConfig) -> Result<ReplayReport> {
    let grid = cfg.grid()?;
    let b = cfg.drift_spec()?;
    let h = cfg.cost_fn()?;
    let lambda = b.lambda();
    let t_final = cfg.t_final;
    let d = grid.dim();
    let budget = budget(d, cfg.n_max);
    let mut stages = Vec::new();
    let mut record = |stage: &'static str, value: f64, tolerance: f64| {
        stages.push(StageRecord {
            stage,
            value,
            tolerance,
            passed: value <= tolerance,
        });
    };

    // rescale
    let map = TimeMap::new(lambda);
    let s1 = map.s_of_t(t_final).map_err(stage("rescale"))?;
    let times = [0.0, t_final];
    let (dt, _) =
        plan_steps(&grid, &b, &times, cfg.dt, cfg.cfl, cfg.flux).map_err(stage("rescale"))?;
    let rho0 = [cfg.mu1.build(&grid)?, cfg.mu2.build(&grid)?];
    let (r1, r2) = rayon::join(
        || run_forward(&rho0[0], &b, lambda, grid, &times, dt, 1, cfg.cfl, cfg.flux),
        || run_forward(&rho0[1], &b, lambda, grid, &times, dt, 1, cfg.cfl, cfg.flux),
    );
    let trajs = [r1?, r2?];
    let factor = map.space_factor(t_final);
    let sigma1 = [
        measure_at(&trajs[0], t_final)?.pushforward_scale(factor)?,
        measure_at(&trajs[1], t_final)?.pushforward_scale(factor)?,
    ];
    let mass_drift = trajs
        .iter()
        .map(|t| t.diagnostics().max_mass_drift)
        .fold(0.0, f64::max);
    record("rescale", mass_drift, 1e-12);

    let expand = factor.max(1.0);
    let bgrid = Grid::new(
        d,
        grid.half_extent() * expand,
        (grid.cells_per_axis() as f64 * expand).round() as usize,
    )?;
    let bpts = bgrid.points();

    // duals
    let c1 = coarsen(&sigma1[0], budget)?;
    let c2 = coarsen(&sigma1[1], budget)?;
    let lp = Solver::default()
        .solve(&c1.measure, &c2.measure, &h)
        .map_err(stage("duals"))?;
    record("duals", lp.gap.abs(), 1e-9 * (1.0 + lp.cost.abs()));

    // h_transform
    let mut phi2 = h_transform_between(&lp.phi, c1.measure.points(), &bpts, d, &h);
    let mut phi1 = h_transform_between(&phi2, &bpts, &bpts, d, &h);
    let tightened_value = pairing_sigma(&phi1, &phi2, &bgrid, &sigma1[0], &sigma1[1])
        .map_err(stage("h_transform"))?;
    let v = check_constraint_pair(&phi1, &phi2, &h, &bgrid);
    record("h_transform", v, ROUNDOFF * (1.0 + lp.cost.abs()));

    // shift
    let c = phi1.iter().copied().fold(f64::INFINITY, f64::min);
    phi1.iter_mut().for_each(|x| *x -= c);
    phi2.iter_mut().for_each(|x| *x += c);
    let sign_defect = phi1
        .iter()
        .map(|x| (-x).max(0.0))
        .chain(phi2.iter().map(|x| x.max(0.0)))
        .fold(0.0, f64::max);
    record("shift", sign_defect, ROUNDOFF * (1.0 + c.abs()));

    // mollify
    let eta = 3.0 * bgrid.dx();
    let m1 = mollify(&bgrid, &phi1, eta);
    let m2 = mollify(&bgrid, &phi2, eta);
    // smallest constant shift that makes the mollified pair admissible again
    let delta_eta = check_constraint_pair(&m1, &m2, &h, &bgrid).max(0.0);
    let phi1 = m1;
    let phi2: Vec<f64> = m2.iter().map(|x| x - delta_eta).collect();
    let v = check_constraint_pair(&phi1, &phi2, &h, &bgrid);
    record("mollify", v, ROUNDOFF * (1.0 + lp.cost.abs()));

    // cutoff
    let sup1 = phi1.iter().copied().fold(0.0, f64::max);
    let r0 = cutoff_radius(&h, sup1)
        .ok_or_else(|| Error::stage("cutoff", "cost stays below sup φ¹; regularize it first"))?;
    let box_radius = bgrid.half_extent() * (d as f64).sqrt();
    let radius = r0.max(2.0 * box_radius);
    let norm = |k: usize| {
        bpts[k * d..(k + 1) * d]
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    };
    let phi1: Vec<f64> = (0..bgrid.len())
        .map(|k| phi1[k] * chi(norm(k) / radius))
        .collect();
    let phi2: Vec<f64> = (0..bgrid.len())
        .map(|k| phi2[k] * chi(norm(k) / (4.0 * radius)))
        .collect();
    let violation_s1 = check_constraint_pair(&phi1, &phi2, &h, &bgrid);
    record("cutoff", violation_s1, ROUNDOFF * (1.0 + lp.cost.abs()));
    let sigma_s1 = pairing_sigma(&phi1, &phi2, &bgrid, &sigma1[0], &sigma1[1])?;

    // backward
    let n = *cfg.ladder_n.iter().max().unwrap_or(&1);
    let m = *cfg.ladder_m.iter().max().unwrap_or(&1);
    let a = b.centered();
    let params = ApproxParams::new(n, m).map_err(stage("backward"))?;
    let anm: Arc<dyn DriftField> = Arc::new(ladder(&a, params));
    let field = Rescaled::new(anm, map);
    let mut bcfg = SolverConfig::auto(bgrid, s1)
        .with_cfl(cfg.cfl)
        .with_flux(cfg.flux);
    if lambda == 0.0 {
        bcfg.dt = Some(dt);
    }
    let (s_a, s_b) = rayon::join(
        || solve_backward(&phi1, &field, &bcfg),
        || solve_backward(&phi2, &field, &bcfg),
    );
    let sol = [
        s_a.map_err(stage("backward"))?,
        s_b.map_err(stage("backward"))?,
    ];
    let bounds = [sol[0].bounds().clone(), sol[1].bounds().clone()];
    let bound_defect = bounds
        .iter()
        .map(|bd| {
            let sup = (bd.observed_max - bd.final_max)
                .max(bd.final_min - bd.observed_min)
                .max(0.0);
            let grad = (bd.max_gradient - bd.final_gradient * bd.gradient_factor).max(0.0);
            sup.max(grad)
        })
        .fold(0.0, f64::max);
    record("backward", bound_defect, 1e-12);

    // constraint_s0
    let violation_s0 = check_constraint_pair(sol[0].initial(), sol[1].initial(), &h, &bgrid);
    let bdt = sol[0].dt();
    record(
        "constraint_s0",
        violation_s0,
        violation_s1.max(0.0) + 5.0 * (bgrid.dx() + bdt),
    );
    let sigma_s0 = pairing_sigma(
        sol[0].initial(),
        sol[1].initial(),
        &bgrid,
        &rho0[0],
        &rho0[1],
    )?;

    // knm
    let knm = knm_error(
        &b,
        &cfg.ladder_pairs(),
        &[&trajs[0], &trajs[1]],
        0.0,
        t_final,
    )
    .map_err(stage("knm"))?;
    let k_used = knm_error(&b, &[(n, m)], &[&trajs[0], &trajs[1]], 0.0, t_final)?[0].k;
    let knm_defect = knm
        .iter()
        .map(|e| {
            if e.k.is_finite() {
                (-e.k).max(0.0)
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    record("knm", knm_defect, 0.0);

    // chain
    let cost0 = eval_cost(&rho0[0], &rho0[1], &h, budget).map_err(stage("chain"))?;
    let lipschitz = bounds.iter().map(|bd| bd.max_gradient).fold(0.0, f64::max);
    let lk = lipschitz * k_used;
    let chain_slack = cost0.cost + lk - sigma_s1;
    record("chain", -chain_slack, 1e-3 * cost0.cost.abs());

    Ok(ReplayReport {
        lambda,
        t_final,
        s1,
        n,
        m,
        lp_cost_s1: lp.cost,
        lp_gap_s1: lp.gap,
        tightened_value,
        eta,
        delta_eta,
        cutoff_r0: r0,
        cutoff_r: radius,
        sigma_s1,
        sigma_s0,
        cost_s0: cost0.cost,
        gap_s0: cost0.gap,
        violation_s1,
        violation_s0,
        lipschitz,
        knm,
        k_used,
        transport_slack: sigma_s0 + lk - sigma_s1,
        duality_slack: cost0.cost - sigma_s0,
        chain_slack,
        bounds,
        stages,
        diagnostics: [
            trajs[0].diagnostics().clone(),
            trajs[1].diagnostics().clone(),
        ],
    })
}
