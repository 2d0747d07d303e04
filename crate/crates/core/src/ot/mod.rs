//! Exact discrete optimal transport for radial costs: optimal couplings,
//! Kantorovich potentials and duality gaps.

pub mod coarsen;
pub mod network_simplex;

use std::io::Write;

use crate::costs::{h_transform_between, CostFn};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

pub use coarsen::{coarsen, Coarsened};

/// Default bound on the support size handed to the exact solver.
pub const DEFAULT_MAX_SUPPORT: usize = 1024;

/// Integer resolution of the weights.
const SCALE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Coupling {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row_sums(&self, m: usize) -> Vec<f64> {
        let mut s = vec![0.0; m];
        for (i, w) in self.rows.iter().zip(&self.weights) {
            s[*i] += w;
        }
        s
    }

    pub fn col_sums(&self, n: usize) -> Vec<f64> {
        let mut s = vec![0.0; n];
        for (j, w) in self.cols.iter().zip(&self.weights) {
            s[*j] += w;
        }
        s
    }
}

/// Optimal value with a primal and a dual certificate. Indices refer to the
/// supports of the input measures.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub cost: f64,
    pub coupling: Coupling,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// `cost − (∫φ dμ¹ + ∫ψ dμ²)` against the integer-rounded marginals.
    pub gap: f64,
    pub fast_path: bool,
    pub pivots: usize,
}

impl TransportResult {
    pub fn dual_value(&self, mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> f64 {
        dot(&self.phi, mu1.weights()) + dot(&self.psi, mu2.weights())
    }

    /// Coupling triplets `i,j,w`.
    pub fn write_coupling_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "w"])?;
        for k in 0..self.coupling.len() {
            w.write_record(&[
                self.coupling.rows[k].to_string(),
                self.coupling.cols[k].to_string(),
                format!("{:.17e}", self.coupling.weights[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Flat `key = value` summary.
    pub fn write_summary<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cost = {:.17e}", self.cost)?;
        writeln!(out, "gap = {:.17e}", self.gap)?;
        writeln!(out, "fast_path = {}", self.fast_path)?;
        writeln!(out, "pivots = {}", self.pivots)?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rounds weights to integers summing exactly to `SCALE` (largest remainder).
fn integer_weights(w: &[f64]) -> Vec<i64> {
    let total: f64 = w.iter().sum();
    let target = SCALE as i64;
    let raw: Vec<f64> = w.iter().map(|x| x / total * SCALE).collect();
    let mut out: Vec<i64> = raw.iter().map(|x| x.floor() as i64).collect();
    let mut short = target - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut k = 0;
    while short > 0 {
        out[order[k % order.len()]] += 1;
        short -= 1;
        k += 1;
    }
    while short < 0 {
        let i = order[order.len() - 1 - (k % order.len())];
        if out[i] > 0 {
            out[i] -= 1;
            short += 1;
        }
        k += 1;
    }
    out
}

/// Transport solver with a support budget.
#[derive(Debug, Clone, Copy)]
pub struct Solver {
    pub max_support: usize,
    pub allow_fast_path: bool,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            max_support: DEFAULT_MAX_SUPPORT,
            allow_fast_path: true,
        }
    }
}

impl Solver {
    pub fn lp_only() -> Self {
        Self {
            allow_fast_path: false,
            ..Self::default()
        }
    }

    pub fn solve(
        &self,
        mu1: &DiscreteMeasure,
        mu2: &DiscreteMeasure,
        h: &CostFn,
    ) -> Result<TransportResult> {
        if mu1.dim() != mu2.dim() {
            return Err(Error::invalid("measures live in different dimensions"));
        }
        let (m1, m2) = (mu1.total_mass(), mu2.total_mass());
        if (m1 - m2).abs() > 1e-10 {
            return Err(Error::MarginalMismatch(m1, m2));
        }
        for mu in [mu1, mu2] {
            if mu.support_len() > self.max_support {
                return Err(Error::ExceedsBudget {
                    size: mu.support_len(),
                    budget: self.max_support,
                });
            }
        }
        let rows: Vec<usize> = (0..mu1.len()).filter(|&i| mu1.weights()[i] > 0.0).collect();
        let cols: Vec<usize> = (0..mu2.len()).filter(|&j| mu2.weights()[j] > 0.0).collect();
        let a_full = integer_weights(&rows.iter().map(|&i| mu1.weights()[i]).collect::<Vec<_>>());
        let b_full = integer_weights(&cols.iter().map(|&j| mu2.weights()[j]).collect::<Vec<_>>());
        // drop points whose weight rounds to zero
        let keep_r: Vec<usize> = (0..rows.len()).filter(|&k| a_full[k] > 0).collect();
        let keep_c: Vec<usize> = (0..cols.len()).filter(|&k| b_full[k] > 0).collect();
        let rows: Vec<usize> = keep_r.iter().map(|&k| rows[k]).collect();
        let cols: Vec<usize> = keep_c.iter().map(|&k| cols[k]).collect();
        let a: Vec<i64> = keep_r.iter().map(|&k| a_full[k]).collect();
        let b: Vec<i64> = keep_c.iter().map(|&k| b_full[k]).collect();

        let d = mu1.dim();
        let convex = h.is_convex();
        if self.allow_fast_path && d == 1 && convex {
            let res = self.quantile(mu1, mu2, h, &rows, &cols, &a, &b);
            if res.gap <= 1e-9 * (1.0 + res.cost.abs()) {
                return Ok(res);
            }
        }
        Ok(self.exact(mu1, mu2, h, &rows, &cols, &a, &b))
    }

    #[allow(clippy::too_many_arguments)]
    fn exact(
        &self,
        mu1: &DiscreteMeasure,
        mu2: &DiscreteMeasure,
        h: &CostFn,
        rows: &[usize],
        cols: &[usize],
        a: &[i64],
        b: &[i64],
    ) -> TransportResult {
        let (m, n) = (rows.len(), cols.len());
        let mut cost = vec![0.0; m * n];
        for (ii, &i) in rows.iter().enumerate() {
            for (jj, &j) in cols.iter().enumerate() {
                cost[ii * n + jj] = h.eval(dist(mu1.point(i), mu2.point(j)));
            }
        }
        let sol = network_simplex::solve(&cost, a, b);
        let flows: Vec<(usize, usize, i64)> = sol
            .flows
            .iter()
            .map(|&(i, j, f)| (rows[i], cols[j], f))
            .collect();
        let phi_supp: Vec<f64> = (0..m).map(|i| -sol.potentials[i]).collect();
        finish(
            mu1, mu2, h, rows, cols, a, b, &flows, &phi_supp, false, sol.pivots,
        )
    }

    /// Monotone rearrangement on the line, certified by c-transform duals.
    #[allow(clippy::too_many_arguments)]
    fn quantile(
        &self,
        mu1: &DiscreteMeasure,
        mu2: &DiscreteMeasure,
        h: &CostFn,
        rows: &[usize],
        cols: &[usize],
        a: &[i64],
        b: &[i64],
    ) -> TransportResult {
        let mut ro: Vec<usize> = (0..rows.len()).collect();
        let mut co: Vec<usize> = (0..cols.len()).collect();
        ro.sort_by(|&x, &y| mu1.point(rows[x])[0].total_cmp(&mu1.point(rows[y])[0]));
        co.sort_by(|&x, &y| mu2.point(cols[x])[0].total_cmp(&mu2.point(cols[y])[0]));
        let mut flows = Vec::with_capacity(rows.len() + cols.len());
        let (mut p, mut q) = (0usize, 0usize);
        let (mut ra, mut rb) = (a[ro[0]], b[co[0]]);
        // staircase potentials: φ_i + ψ_j = c_ij along the path
        let mut phi = vec![f64::NAN; rows.len()];
        let mut psi = vec![f64::NAN; cols.len()];
        phi[ro[0]] = 0.0;
        loop {
            let (i, j) = (ro[p], co[q]);
            let c = h.eval(dist(mu1.point(rows[i]), mu2.point(cols[j])));
            if phi[i].is_nan() {
                phi[i] = c - psi[j];
            } else if psi[j].is_nan() {
                psi[j] = c - phi[i];
            }
            let f = ra.min(rb);
            if f > 0 {
                flows.push((rows[i], cols[j], f));
            }
            ra -= f;
            rb -= f;
            let last_row = p + 1 == ro.len();
            let last_col = q + 1 == co.len();
            if ra == 0 && !last_row {
                p += 1;
                ra = a[ro[p]];
            } else if rb == 0 && !last_col {
                q += 1;
                rb = b[co[q]];
            } else {
                break;
            }
        }
        let phi_supp: Vec<f64> = phi
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { *v })
            .collect();
        finish(mu1, mu2, h, rows, cols, a, b, &flows, &phi_supp, true, 0)
    }
}

/// Cleans the duals by a double c-transform over the full supports,
/// normalizes `φ(first) = 0` and evaluates the gap.
#[allow(clippy::too_many_arguments)]
fn finish(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    h: &CostFn,
    rows: &[usize],
    cols: &[usize],
    a: &[i64],
    b: &[i64],
    flows: &[(usize, usize, i64)],
    phi_supp: &[f64],
    fast_path: bool,
    pivots: usize,
) -> TransportResult {
    let d = mu1.dim();
    let sub_pts: Vec<f64> = rows.iter().flat_map(|&i| mu1.point(i).to_vec()).collect();
    let mut psi = h_transform_between(phi_supp, &sub_pts, mu2.points(), d, h);
    let mut phi = h_transform_between(&psi, mu2.points(), mu1.points(), d, h);
    let shift = phi[0];
    phi.iter_mut().for_each(|v| *v -= shift);
    psi.iter_mut().for_each(|v| *v += shift);

    let mut coupling = Coupling {
        rows: Vec::with_capacity(flows.len()),
        cols: Vec::with_capacity(flows.len()),
        weights: Vec::with_capacity(flows.len()),
    };
    let mut cost = 0.0;
    for &(i, j, f) in flows {
        let w = f as f64 / SCALE;
        coupling.rows.push(i);
        coupling.cols.push(j);
        coupling.weights.push(w);
        cost += w * h.eval(dist(mu1.point(i), mu2.point(j)));
    }
    let dual: f64 = rows
        .iter()
        .zip(a)
        .map(|(&i, &ai)| phi[i] * ai as f64 / SCALE)
        .sum::<f64>()
        + cols
            .iter()
            .zip(b)
            .map(|(&j, &bj)| psi[j] * bj as f64 / SCALE)
            .sum::<f64>();
    TransportResult {
        cost,
        coupling,
        phi,
        psi,
        gap: cost - dual,
        fast_path,
        pivots,
    }
}

/// Optimal transport with the default solver.
pub fn transport_cost(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    h: &CostFn,
) -> Result<TransportResult> {
    Solver::default().solve(mu1, mu2, h)
}

/// `W_p = C_{r^p}^{1/p}`.
pub fn wasserstein_p(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("W_p needs p ≥ 1, got {p}")));
    }
    let r = transport_cost(mu1, mu2, &CostFn::power(p)?)?;
    Ok(r.cost.max(0.0).powf(1.0 / p))
}

/// Costs along a sequence of approximating costs `hⁿ ≤ h`.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub costs: Vec<f64>,
    pub gaps: Vec<f64>,
    pub limit: f64,
    pub nondecreasing: bool,
    pub final_deviation: f64,
}

pub fn stability_check(
    h: &CostFn,
    approximants: &[CostFn],
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
) -> Result<StabilityReport> {
    let solver = Solver::lp_only();
    let limit = solver.solve(mu1, mu2, h)?;
    let mut costs = Vec::with_capacity(approximants.len());
    let mut gaps = vec![limit.gap];
    for hn in approximants {
        let r = solver.solve(mu1, mu2, hn)?;
        costs.push(r.cost);
        gaps.push(r.gap);
    }
    let tol = 1e-9 * (1.0 + limit.cost.abs());
    let nondecreasing = costs.windows(2).all(|w| w[1] >= w[0] - tol)
        && costs.iter().all(|c| *c <= limit.cost + tol);
    let final_deviation = costs.last().map_or(0.0, |c| (limit.cost - c).abs());
    Ok(StabilityReport {
        costs,
        gaps,
        limit: limit.cost,
        nondecreasing,
        final_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_mass_moves_distance_one() {
        let d0 = DiscreteMeasure::dirac(&[0.0]);
        let mix = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let h = CostFn::power(1.0).unwrap();
        for solver in [Solver::default(), Solver::lp_only()] {
            let r = solver.solve(&d0, &mix, &h).unwrap();
            assert!((r.cost - 0.5).abs() < 1e-12);
            assert!(r.gap.abs() < 1e-12);
        }
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let mu = DiscreteMeasure::new(2, vec![0.0, 0.0, 1.0, 0.5, -1.0, 2.0], vec![0.2, 0.5, 0.3])
            .unwrap();
        let r = Solver::lp_only()
            .solve(&mu, &mu, &CostFn::power(2.0).unwrap())
            .unwrap();
        assert!(r.cost.abs() < 1e-15);
        for k in 0..r.coupling.len() {
            assert_eq!(r.coupling.rows[k], r.coupling.cols[k]);
        }
        assert!(r.phi.iter().chain(&r.psi).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn budget_and_mismatch_errors() {
        let pts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mu = DiscreteMeasure::normalized(1, pts, vec![1.0; 20]).unwrap();
        let s = Solver {
            max_support: 10,
            allow_fast_path: true,
        };
        assert!(matches!(
            s.solve(&mu, &mu, &CostFn::power(1.0).unwrap()),
            Err(Error::ExceedsBudget {
                size: 20,
                budget: 10
            })
        ));
    }

    #[test]
    fn rounding_sums_to_scale() {
        let w = integer_weights(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(w.iter().sum::<i64>(), SCALE as i64);
    }
}
