//! Radial transport costs `h(|x − y|)`, their rescalings `h_s(r) = h(r e^s)`,
//! the Lipschitz and unbounded regularizations, and h-transforms.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Grid};

/// Continuous piecewise-linear function through `(r_i, v_i)`, extended
/// linearly beyond the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    r: Vec<f64>,
    v: Vec<f64>,
}

impl PiecewiseLinear {
    /// Requires `r_0 = 0`, `v_0 = 0`, strictly increasing `r`, nondecreasing `v`.
    pub fn new(r: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if r.len() != v.len() || r.len() < 2 {
            return Err(Error::invalid("need at least two samples of equal length"));
        }
        if r[0] != 0.0 || v[0] != 0.0 {
            return Err(Error::invalid("samples must start at (0, 0)"));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("sample radii must increase strictly"));
        }
        if v.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::invalid("sample values must be nondecreasing"));
        }
        if v.iter().chain(&r).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Self { r, v })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.r.len();
        let k = match self.r.partition_point(|ri| *ri <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let slope = (self.v[k + 1] - self.v[k]) / (self.r[k + 1] - self.r[k]);
        self.v[k] + slope * (x - self.r[k])
    }

    fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.r
            .windows(2)
            .zip(self.v.windows(2))
            .map(|(r, v)| (v[1] - v[0]) / (r[1] - r[0]))
    }

    /// Reads two columns `r,h` (with a header line).
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut r = Vec::new();
        let mut v = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::invalid("cost samples need two columns"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad cost sample: {e}")))
            };
            r.push(parse(0)?);
            v.push(parse(1)?);
        }
        Self::new(r, v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    Power {
        p: f64,
    },
    ConcaveCap {
        cap: f64,
    },
    Samples(PiecewiseLinear),
    /// `base + ε·g`.
    Perturbed {
        base: Arc<CostFn>,
        eps: f64,
        tail: PiecewiseLinear,
    },
    /// Exact `inf_{s ≥ 0} base(s) + n|r − s|`; the infimum over `s ≤ r` is
    /// attained at `r` or at one of `knots`, `prefix_min[k]` is
    /// `min_{j ≤ k} base(knot_j) − n knot_j`.
    LipschitzEnvelope {
        base: Arc<CostFn>,
        n: f64,
        knots: Vec<f64>,
        prefix_min: Vec<f64>,
    },
}

/// `r ↦ h(arg_scale·r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFn {
    kind: CostKind,
    arg_scale: f64,
}

impl CostFn {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!(
                "power exponent {p} must be positive"
            )));
        }
        Ok(Self::from_kind(CostKind::Power { p }))
    }

    pub fn concave_cap(cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::invalid(format!("cap {cap} must be positive")));
        }
        Ok(Self::from_kind(CostKind::ConcaveCap { cap }))
    }

    pub fn samples(pl: PiecewiseLinear) -> Self {
        Self::from_kind(CostKind::Samples(pl))
    }

    /// Parses `power:p`, `concave_cap:c` or `samples:<path>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("cost `{spec}` needs the form name:arg")))?;
        let num = || {
            arg.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("cost `{spec}`: {e}")))
        };
        match name.trim() {
            "power" => Self::power(num()?),
            "concave_cap" => Self::concave_cap(num()?),
            "samples" => Ok(Self::samples(PiecewiseLinear::load_csv(Path::new(
                arg.trim(),
            ))?)),
            other => Err(Error::invalid(format!("unknown cost `{other}`"))),
        }
    }

    fn from_kind(kind: CostKind) -> Self {
        Self {
            kind,
            arg_scale: 1.0,
        }
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn arg_scale(&self) -> f64 {
        self.arg_scale
    }

    pub fn eval(&self, r: f64) -> f64 {
        let x = r * self.arg_scale;
        match &self.kind {
            CostKind::Power { p } => {
                if x == 0.0 {
                    0.0
                } else if *p == 2.0 {
                    x * x
                } else if *p == 1.0 {
                    x
                } else {
                    x.powf(*p)
                }
            }
            CostKind::ConcaveCap { cap } => x.min(*cap),
            CostKind::Samples(pl) => pl.eval(x),
            CostKind::Perturbed { base, eps, tail } => base.eval(x) + eps * tail.eval(x),
            CostKind::LipschitzEnvelope {
                base,
                n,
                knots,
                prefix_min,
            } => {
                let k = knots.partition_point(|s| *s <= x);
                let own = base.eval(x);
                if k == 0 {
                    own
                } else {
                    own.min(n * x + prefix_min[k - 1])
                }
            }
        }
    }

    pub fn is_lipschitz(&self) -> bool {
        match &self.kind {
            CostKind::Power { p } => *p == 1.0,
            CostKind::ConcaveCap { .. }
            | CostKind::Samples(_)
            | CostKind::LipschitzEnvelope { .. } => true,
            CostKind::Perturbed { base, .. } => base.is_lipschitz(),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        match &self.kind {
            CostKind::Power { .. } => true,
            CostKind::ConcaveCap { .. } => false,
            CostKind::Samples(pl) => pl.slopes().last().unwrap_or(0.0) > 0.0,
            CostKind::Perturbed { base, eps, .. } => *eps > 0.0 || base.is_unbounded(),
            CostKind::LipschitzEnvelope { base, .. } => base.is_unbounded(),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        true
    }

    pub fn is_convex(&self) -> bool {
        match &self.kind {
            CostKind::Power { p } => *p >= 1.0,
            CostKind::ConcaveCap { .. } => false,
            CostKind::Samples(pl) => {
                let s: Vec<f64> = pl.slopes().collect();
                s.windows(2).all(|w| w[1] >= w[0] - 1e-15)
            }
            CostKind::Perturbed { eps, base, .. } => *eps == 0.0 && base.is_convex(),
            CostKind::LipschitzEnvelope { base, .. } => base.is_convex(),
        }
    }

    pub fn is_concave(&self) -> bool {
        match &self.kind {
            CostKind::Power { p } => *p <= 1.0,
            CostKind::ConcaveCap { .. } => true,
            CostKind::Samples(pl) => {
                let s: Vec<f64> = pl.slopes().collect();
                s.windows(2).all(|w| w[1] <= w[0] + 1e-15)
            }
            CostKind::Perturbed { base, .. } => base.is_concave(),
            CostKind::LipschitzEnvelope { base, .. } => base.is_concave(),
        }
    }

    /// Exponent `p` with `h(αr) ≥ α^p h(r)` for all `α ≥ 1` (`alpha_ge_1`) or
    /// all `α ≤ 1`, when known in closed form.
    pub fn homogeneity_exponent(&self, alpha_ge_1: bool) -> Option<f64> {
        match &self.kind {
            CostKind::Power { p } => Some(*p),
            _ if !alpha_ge_1 && self.is_concave() => Some(1.0),
            _ => None,
        }
    }

    /// Power exponent when the cost is exactly `(a r)^p`.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            CostKind::Power { p } => Some(p),
            _ => None,
        }
    }
}

/// `h_s(r) = h(r e^s)`.
pub fn rescale_cost(h: &CostFn, s: f64) -> CostFn {
    CostFn {
        kind: h.kind.clone(),
        arg_scale: h.arg_scale * s.exp(),
    }
}

/// Lipschitz regularization `hⁿ(r) = inf_{s ≥ 0} h(s) + n|r − s|`.
pub fn lipschitz_approx(h: &CostFn, n: f64) -> Result<CostFn> {
    if !(n > 0.0) {
        return Err(Error::invalid("Lipschitz level must be positive"));
    }
    let a = h.arg_scale;
    // candidate minimizers of q(s) = h(s) − n s in the scaled variable
    let knots: Vec<f64> = match &h.kind {
        _ if h.is_concave() => vec![0.0],
        CostKind::Power { p } => {
            // h'(s) = p a^p s^{p−1} = n
            let star = (n / (p * a.powf(*p))).powf(1.0 / (p - 1.0));
            vec![0.0, star]
        }
        CostKind::Samples(pl) => pl.nodes().iter().map(|r| r / a).collect(),
        _ => {
            let mut k = vec![0.0];
            let lo: f64 = 1e-6;
            let hi: f64 = 1e4;
            for i in 0..4096 {
                k.push(lo * (hi / lo).powf(i as f64 / 4095.0) / a);
            }
            k
        }
    };
    let mut prefix_min = Vec::with_capacity(knots.len());
    let mut best = f64::INFINITY;
    for s in &knots {
        best = best.min(h.eval(*s) - n * s);
        prefix_min.push(best);
    }
    Ok(CostFn {
        kind: CostKind::LipschitzEnvelope {
            base: Arc::new(h.clone()),
            n,
            knots,
            prefix_min,
        },
        arg_scale: 1.0,
    })
}

/// Result of the unbounded perturbation `h^ε = h + εg`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub cost: CostFn,
    pub tail: PiecewiseLinear,
    /// `r_0 = 0, r_1 = 1, …`; `g(r_k) = k`.
    pub radii: Vec<f64>,
    /// `G = ∫ g(|x|) dρ₀`.
    pub g_integral: f64,
    /// `Σ_k m(r_k) ≥ G`.
    pub g_bound: f64,
}

/// Builds the tail function `g` for `ρ₀ = Σ measures` (total mass may exceed
/// one) and returns `h + εg`.
pub fn unbounded_perturbation(
    h: &CostFn,
    eps: f64,
    rho0: &[&DiscreteMeasure],
) -> Result<Perturbation> {
    if !(eps > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for mu in rho0 {
        for i in 0..mu.len() {
            let w = mu.weights()[i];
            if w > 0.0 {
                atoms.push((mu.point(i).iter().map(|c| c * c).sum::<f64>().sqrt(), w));
            }
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    // tail_mass[k] = Σ_{j ≥ k} w_j
    let mut tail_mass = vec![0.0; atoms.len() + 1];
    for k in (0..atoms.len()).rev() {
        tail_mass[k] = tail_mass[k + 1] + atoms[k].1;
    }
    let m = |r: f64| -> f64 { tail_mass[atoms.partition_point(|a| a.0 < r)] };
    let threshold_radius = |thr: f64| -> f64 {
        // smallest r with m(r) ≤ thr is just above the largest atom radius
        // whose tail exceeds thr
        let mut best: Option<f64> = None;
        for k in 0..atoms.len() {
            if tail_mass[k] > thr {
                best = Some(atoms[k].0);
            }
        }
        best.map_or(0.0, |r| r * (1.0 + 1e-12) + 1e-12)
    };
    let max_radius = atoms.last().map_or(0.0, |a| a.0);
    let mut radii = vec![0.0, 1.0];
    let mut n = 1usize;
    loop {
        let rn = radii[n];
        let inc = rn - radii[n - 1];
        if m(rn) == 0.0 && rn > max_radius {
            break;
        }
        let next = (rn + inc).max(threshold_radius(0.5f64.powi(n as i32)));
        radii.push(next);
        n += 1;
        if n > 10_000 {
            return Err(Error::invalid("tail sequence did not terminate"));
        }
    }
    let values: Vec<f64> = (0..radii.len()).map(|k| k as f64).collect();
    let tail = PiecewiseLinear::new(radii.clone(), values)?;
    let g_integral: f64 = atoms.iter().map(|(r, w)| w * tail.eval(*r)).sum();
    let g_bound: f64 = radii.iter().map(|r| m(*r)).sum();
    let cost = CostFn {
        kind: CostKind::Perturbed {
            base: Arc::new(h.clone()),
            eps,
            tail: tail.clone(),
        },
        arg_scale: 1.0,
    };
    Ok(Perturbation {
        cost,
        tail,
        radii,
        g_integral,
        g_bound,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `out(x) = min_y h(|x − y|) − ζ(y)` for `x` in `to`, `y` in `from`.
pub fn h_transform_between(
    zeta: &[f64],
    from: &[f64],
    to: &[f64],
    dim: usize,
    h: &CostFn,
) -> Vec<f64> {
    transform(zeta, from, to, dim, |r| h.eval(r))
}

/// h-transform of a grid function onto the same grid.
///
/// Costs are rounded down and `ζ` up to a dyadic lattice whose quantum is
/// `2^{−40}` times the largest cost on the grid, so differences and minima
/// are exact. Hence `ζ(y) + ζ^h(x) ≤ h(|x − y|)` always, and
/// `ζ^{hhh} = ζ^h` bit for bit whenever `|ζ|` stays below `2^12·max h`.
pub fn h_transform(zeta: &[f64], h: &CostFn, grid: &Grid) -> Vec<f64> {
    let pts = grid.points();
    let diam = 2.0 * grid.half_extent() * (grid.dim() as f64).sqrt();
    let e = h.eval(diam).max(1.0).log2().ceil() as i32;
    let q = 2f64.powi(e - 40);
    let zq: Vec<f64> = zeta.iter().map(|z| (z / q).ceil() * q).collect();
    transform(&zq, &pts, &pts, grid.dim(), |r| (h.eval(r) / q).floor() * q)
}

fn transform(
    zeta: &[f64],
    from: &[f64],
    to: &[f64],
    dim: usize,
    cost: impl Fn(f64) -> f64 + Sync,
) -> Vec<f64> {
    (0..to.len() / dim)
        .into_par_iter()
        .map(|i| {
            let x = &to[i * dim..(i + 1) * dim];
            let mut best = f64::INFINITY;
            for (j, z) in zeta.iter().enumerate() {
                let v = cost(dist(x, &from[j * dim..(j + 1) * dim])) - z;
                if v < best {
                    best = v;
                }
            }
            best
        })
        .collect()
}
