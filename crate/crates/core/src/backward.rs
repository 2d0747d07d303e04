//! Backward Kolmogorov equation `∂_sφ + Δφ − Ã·∇φ = 0`, solved from final
//! data with the exact adjoint of the forward stencil, plus the constraint
//! check `φ¹(y₁) + φ²(y₂) ≤ h(|y₁ − y₂|)`, the pairing `Σ` and the drift
//! approximation error `K_{n,m}`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::costs::CostFn;
use crate::drift::{ladder, ApproxParams, DriftField, DriftSpec};
use crate::error::{Error, Result};
use crate::fp_forward::{admissible_dt, aligned_dt, FaceVelocities, SolverConfig, Trajectory};
use crate::measures::{DiscreteMeasure, Grid};

/// Slack allowed on the discrete maximum principle.
pub const SUP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualFrame {
    pub s: f64,
    pub phi: Vec<f64>,
}

/// Maximum-principle and gradient bounds observed over all stored frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub final_min: f64,
    pub final_max: f64,
    pub observed_min: f64,
    pub observed_max: f64,
    pub final_gradient: f64,
    pub max_gradient: f64,
    pub gradient_factor: f64,
    pub sup_ok: bool,
    pub gradient_ok: bool,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    grid: Grid,
    /// Ordered by increasing `s`; the last frame is the final datum.
    frames: Vec<DualFrame>,
    dt: f64,
    bounds: BoundsReport,
}

impl DualSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn frames(&self) -> &[DualFrame] {
        &self.frames
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn bounds(&self) -> &BoundsReport {
        &self.bounds
    }

    /// Solution at the initial time `s₀`.
    pub fn initial(&self) -> &[f64] {
        &self.frames[0].phi
    }

    pub fn final_datum(&self) -> &[f64] {
        &self.frames[self.frames.len() - 1].phi
    }

    pub fn frame_at(&self, s: f64) -> Option<&DualFrame> {
        let tol = 1e-9 * (1.0 + s.abs());
        self.frames.iter().find(|f| (f.s - s).abs() <= tol)
    }

    /// Writes `s,x[,y],phi` rows.
    pub fn write_frames_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.grid.dim();
        if d == 1 {
            w.write_record(["s", "x", "phi"])?;
        } else {
            w.write_record(["s", "x", "y", "phi"])?;
        }
        let pts = self.grid.points();
        for fr in &self.frames {
            for k in 0..self.grid.len() {
                let mut rec = vec![format!("{:.12e}", fr.s)];
                rec.extend(pts[k * d..(k + 1) * d].iter().map(|c| format!("{c:.12e}")));
                rec.push(format!("{:.17e}", fr.phi[k]));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Discrete Lipschitz seminorm: largest forward-difference gradient norm.
pub fn discrete_gradient_sup(grid: &Grid, phi: &[f64]) -> f64 {
    let n = grid.cells_per_axis();
    let dx = grid.dx();
    if grid.dim() == 1 {
        return phi
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / dx)
            .fold(0.0, f64::max);
    }
    let mut best: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let gx = if i + 1 < n {
                (phi[k + 1] - phi[k]) / dx
            } else {
                0.0
            };
            let gy = if j + 1 < n {
                (phi[k + n] - phi[k]) / dx
            } else {
                0.0
            };
            best = best.max((gx * gx + gy * gy).sqrt());
        }
    }
    best
}

/// Solves backward from `phi_final` at `cfg.t_final` to `cfg.t_start` (both
/// in the `s` variable of `field`).
pub fn solve_backward(
    phi_final: &[f64],
    field: &dyn DriftField,
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    let grid = cfg.grid;
    if phi_final.len() != grid.len() {
        return Err(Error::invalid("final datum does not match the grid"));
    }
    if field.dim() != grid.dim() {
        return Err(Error::invalid("drift and grid dimensions differ"));
    }
    let (s0, s1) = (cfg.t_start, cfg.t_final);
    if !(s1 >= s0) {
        return Err(Error::invalid("backward interval is reversed"));
    }
    let autonomous = field.is_autonomous();
    let face_at = |s: f64| {
        if field.is_zero() {
            FaceVelocities::zero(&grid, cfg.flux)
        } else {
            FaceVelocities::new(&grid, field, s, cfg.flux)
        }
    };
    let mut faces = face_at(s0);
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => {
            let mut rate = faces.max_outflow_rate();
            if !autonomous {
                rate = rate.max(face_at(s1).max_outflow_rate());
            }
            // same bound as the forward solver, expressed via the outflow rate
            let dt_max = (cfg.cfl_safety / rate).min(admissible_dt(&grid, 0.0, cfg.cfl_safety));
            aligned_dt(dt_max, s0, &[s1])
        }
    };
    let span = s1 - s0;
    let steps = if span == 0.0 {
        0
    } else {
        (span / dt).round() as usize
    };
    if span > 0.0 && ((span / dt) - steps as f64).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "interval {span} is not a multiple of dt = {dt}"
        )));
    }
    let check = |faces: &FaceVelocities| -> Result<()> {
        let rate = faces.max_outflow_rate();
        if dt * rate > cfg.cfl_safety * (1.0 + 1e-12) {
            return Err(Error::CflViolated {
                dt,
                admissible: cfg.cfl_safety / rate,
            });
        }
        Ok(())
    };
    check(&faces)?;
    let mut phi = phi_final.to_vec();
    let mut next = vec![0.0; phi.len()];
    let mut frames = vec![DualFrame {
        s: s1,
        phi: phi.clone(),
    }];
    for back in 0..steps {
        let k = steps - 1 - back;
        let s_k = s0 + k as f64 * dt;
        if !autonomous {
            faces = face_at(s_k);
            check(&faces)?;
        }
        faces.adjoint_step(&phi, dt, &mut next);
        std::mem::swap(&mut phi, &mut next);
        if (back + 1) % cfg.stride == 0 || k == 0 {
            frames.push(DualFrame {
                s: s_k,
                phi: phi.clone(),
            });
        }
    }
    frames.reverse();
    let bounds = bounds_report(&grid, &frames);
    Ok(DualSolution {
        grid,
        frames,
        dt,
        bounds,
    })
}

fn bounds_report(grid: &Grid, frames: &[DualFrame]) -> BoundsReport {
    let fin = &frames[frames.len() - 1].phi;
    let final_min = fin.iter().copied().fold(f64::INFINITY, f64::min);
    let final_max = fin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut observed_min = f64::INFINITY;
    let mut observed_max = f64::NEG_INFINITY;
    let mut max_gradient: f64 = 0.0;
    for f in frames {
        for v in &f.phi {
            observed_min = observed_min.min(*v);
            observed_max = observed_max.max(*v);
        }
        max_gradient = max_gradient.max(discrete_gradient_sup(grid, &f.phi));
    }
    let final_gradient = discrete_gradient_sup(grid, fin);
    let gradient_factor = 1.0 + 5.0 * grid.dx();
    let sup_final = final_max.abs().max(final_min.abs());
    BoundsReport {
        final_min,
        final_max,
        observed_min,
        observed_max,
        final_gradient,
        max_gradient,
        gradient_factor,
        sup_ok: observed_min >= final_min - SUP_SLACK
            && observed_max <= final_max + SUP_SLACK
            && observed_max.abs().max(observed_min.abs()) <= sup_final + SUP_SLACK,
        gradient_ok: max_gradient <= final_gradient * gradient_factor + 1e-12,
    }
}

/// Largest `φ¹(y₁) + φ²(y₂) − h(|y₁ − y₂|)` over pairs of grid points.
///
/// Exhaustive on small grids; otherwise a stride-4 scan followed by an
/// exhaustive search within two strides of the worst coarse pair.
pub fn check_constraint_pair(phi1: &[f64], phi2: &[f64], h: &CostFn, grid: &Grid) -> f64 {
    constraint_violation(phi1, phi2, h, grid).0
}

/// As [`check_constraint_pair`], also returning the maximizing pair of cells.
pub fn constraint_violation(
    phi1: &[f64],
    phi2: &[f64],
    h: &CostFn,
    grid: &Grid,
) -> (f64, usize, usize) {
    let d = grid.dim();
    let pts = grid.points();
    let p = |k: usize| &pts[k * d..(k + 1) * d];
    let dist = |a: usize, b: usize| {
        p(a).iter()
            .zip(p(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let best_over = |rows: &[usize], cols: &[usize]| -> (f64, usize, usize) {
        rows.par_iter()
            .map(|&a| {
                let mut best = (f64::NEG_INFINITY, a, 0);
                for &b in cols {
                    let v = phi1[a] + phi2[b] - h.eval(dist(a, b));
                    if v > best.0 {
                        best = (v, a, b);
                    }
                }
                best
            })
            .reduce(
                || (f64::NEG_INFINITY, 0, 0),
                |x, y| {
                    if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) {
                        y
                    } else {
                        x
                    }
                },
            )
    };
    let all: Vec<usize> = (0..grid.len()).collect();
    if d == 1 || grid.len() <= 2048 {
        return best_over(&all, &all);
    }
    let n = grid.cells_per_axis();
    let stride = 4;
    let coarse: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let [i, j] = grid.index(k);
            i % stride == 0 && j % stride == 0
        })
        .collect();
    let (_, a, b) = best_over(&coarse, &coarse);
    let window = |c: usize| -> Vec<usize> {
        let [ci, cj] = grid.index(c);
        let r = 2 * stride;
        let (i0, i1) = (ci.saturating_sub(r), (ci + r).min(n - 1));
        let (j0, j1) = (cj.saturating_sub(r), (cj + r).min(n - 1));
        let mut v = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                v.push(grid.flat(i, j));
            }
        }
        v
    };
    best_over(&window(a), &window(b))
}

/// `Σ = ∫φ¹ dμ¹ + ∫φ² dμ²` with φ interpolated at the support points.
pub fn pairing_sigma(
    phi1: &[f64],
    phi2: &[f64],
    grid: &Grid,
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
) -> Result<f64> {
    let mut total = 0.0;
    for (phi, mu) in [(phi1, mu1), (phi2, mu2)] {
        for i in 0..mu.len() {
            let w = mu.weights()[i];
            if w == 0.0 {
                continue;
            }
            total += w * grid.interpolate(phi, mu.point(i))?;
        }
    }
    Ok(total)
}

/// One entry of the `K_{n,m}` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnmEntry {
    pub n: usize,
    pub m: usize,
    pub k: f64,
}

/// `K_{n,m} = Σ_{i=1,2} ∫_{t₀}^{t₁} e^{λt} ∫ |A_{n,m} − A| dρⁱ_t dt`, which
/// equals the rescaled `∫∫ |Ã_{n,m} − Ã| dσⁱ_s ds`. `b` is the original drift
/// with its `λ`.
pub fn knm_error(
    b: &DriftSpec,
    ladder_params: &[(usize, usize)],
    trajs: &[&Trajectory],
    t0: f64,
    t1: f64,
) -> Result<Vec<KnmEntry>> {
    let a = b.centered();
    let lambda = b.lambda();
    let grid = *trajs
        .first()
        .ok_or_else(|| Error::invalid("no trajectories"))?
        .grid();
    let d = grid.dim();
    let pts = grid.points();
    let mut out = Vec::with_capacity(ladder_params.len());
    let a_vals: Vec<f64> = (0..grid.len())
        .flat_map(|k| {
            let mut v = vec![0.0; d];
            a.eval(&pts[k * d..(k + 1) * d], 0.0, &mut v);
            v
        })
        .collect();
    for &(n, m) in ladder_params {
        let params = ApproxParams::new(n, m)?;
        if a.is_zero() {
            out.push(KnmEntry { n, m, k: 0.0 });
            continue;
        }
        let anm: Arc<dyn DriftField> = Arc::new(ladder(&a, params));
        let diff: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let mut v = vec![0.0; d];
                anm.eval(&pts[k * d..(k + 1) * d], 0.0, &mut v);
                (0..d)
                    .map(|c| (v[c] - a_vals[k * d + c]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let mut total = 0.0;
        for traj in trajs {
            let mut times: Vec<f64> = vec![t0];
            times.extend(
                traj.frames()
                    .iter()
                    .map(|f| f.t)
                    .filter(|t| *t > t0 && *t < t1),
            );
            times.push(t1);
            let vals: Vec<f64> = times
                .iter()
                .map(|&t| -> Result<f64> {
                    let w = traj.weights_at(t)?;
                    Ok((lambda * t).exp() * w.iter().zip(&diff).map(|(x, y)| x * y).sum::<f64>())
                })
                .collect::<Result<_>>()?;
            for k in 1..times.len() {
                total += 0.5 * (times[k] - times[k - 1]) * (vals[k] + vals[k - 1]);
            }
        }
        out.push(KnmEntry { n, m, k: total });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_exact_solutions() {
        let grid = Grid::new(2, 2.0, 10).unwrap();
        let phi = vec![0.37; grid.len()];
        let sol = solve_backward(
            &phi,
            &DriftSpec::rotation(1.0),
            &SolverConfig::auto(grid, 0.3),
        )
        .unwrap();
        for f in sol.frames() {
            assert!(f.phi.iter().all(|v| (v - 0.37).abs() < 1e-15));
        }
        assert!(sol.bounds().sup_ok && sol.bounds().gradient_ok);
    }

    #[test]
    fn trivial_constraint_pairs() {
        let grid = Grid::new(1, 2.0, 32).unwrap();
        let zero = vec![0.0; grid.len()];
        let h = CostFn::power(2.0).unwrap();
        assert_eq!(check_constraint_pair(&zero, &zero, &h, &grid), 0.0);
        let pts = grid.points();
        let p1: Vec<f64> = pts.clone();
        let p2: Vec<f64> = pts.iter().map(|x| -x).collect();
        let v = check_constraint_pair(&p1, &p2, &CostFn::power(1.0).unwrap(), &grid);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn pairing_of_constants() {
        let grid = Grid::new(1, 2.0, 16).unwrap();
        let mu = DiscreteMeasure::new(1, vec![-0.3, 0.8], vec![0.4, 0.6]).unwrap();
        let zero = vec![0.0; 16];
        let one = vec![1.0; 16];
        assert_eq!(pairing_sigma(&zero, &zero, &grid, &mu, &mu).unwrap(), 0.0);
        assert!((pairing_sigma(&one, &one, &grid, &mu, &mu).unwrap() - 2.0).abs() < 1e-15);
        let far = DiscreteMeasure::dirac(&[5.0]);
        assert!(matches!(
            pairing_sigma(&one, &one, &grid, &far, &mu),
            Err(Error::OutsideGrid(_))
        ));
    }
}
