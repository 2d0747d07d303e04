//! Probability measures on ℝ^d (d = 1, 2) as weighted point clouds, the grid
//! they are usually sampled on, and the distributional residual of the
//! Fokker–Planck equation.
//!
//! Grid histograms are point clouds whose points are cell centers. Rescaled
//! measures leave the lattice, so the support is stored explicitly.

use std::io::{Read, Write};
use std::path::Path;

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::fp_forward::Trajectory;
use crate::quadrature::bump;

/// Tolerance on total mass for a probability measure.
pub const MASS_TOL: f64 = 1e-12;

/// Uniform cell-centered grid on the box `[-L, L]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    half_extent: f64,
    cells: usize,
}

impl Grid {
    pub fn new(dim: usize, half_extent: f64, cells: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!(
                "grid dimension {dim} not in {{1, 2}}"
            )));
        }
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(Error::invalid(format!(
                "half extent {half_extent} must be positive"
            )));
        }
        if cells < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 cells per axis, got {cells}"
            )));
        }
        Ok(Self {
            dim,
            half_extent,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_extent / self.cells as f64
    }

    /// Total number of cells, `n^d`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Coordinate of the `i`-th center along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_extent + (i as f64 + 0.5) * self.dx()
    }

    /// Multi-index of flat cell `k` (x fastest).
    pub fn index(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k % self.cells, k / self.cells]
        }
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        if self.dim == 1 {
            i
        } else {
            j * self.cells + i
        }
    }

    pub fn point(&self, k: usize, out: &mut [f64]) {
        let [i, j] = self.index(k);
        out[0] = self.center(i);
        if self.dim == 2 {
            out[1] = self.center(j);
        }
    }

    /// All cell centers, flattened.
    pub fn points(&self) -> Vec<f64> {
        let mut pts = vec![0.0; self.len() * self.dim];
        for k in 0..self.len() {
            self.point(k, &mut pts[k * self.dim..(k + 1) * self.dim]);
        }
        pts
    }

    /// Whether cell `k` lies in the outermost layer of the box.
    pub fn is_boundary(&self, k: usize) -> bool {
        let [i, j] = self.index(k);
        let edge = |a: usize| a == 0 || a + 1 == self.cells;
        edge(i) || (self.dim == 2 && edge(j))
    }

    /// Same box with `cells / factor` cells per axis.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        Grid::new(self.dim, self.half_extent, self.cells / factor)
    }

    /// Multilinear interpolation of a grid function at `x`; values beyond the
    /// outermost centers are extended constantly. Errors if `x` leaves the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        let dx = self.dx();
        let mut lo = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..self.dim {
            let xa = x[a];
            if !(xa >= -self.half_extent - 1e-12 && xa <= self.half_extent + 1e-12) {
                return Err(Error::OutsideGrid(format!(
                    "{x:?} outside [-{0}, {0}]^d",
                    self.half_extent
                )));
            }
            let u = (xa + self.half_extent) / dx - 0.5;
            let u = u.clamp(0.0, (self.cells - 1) as f64);
            let i = (u.floor() as usize).min(self.cells - 2);
            lo[a] = i;
            frac[a] = u - i as f64;
        }
        if self.dim == 1 {
            Ok(values[lo[0]] * (1.0 - frac[0]) + values[lo[0] + 1] * frac[0])
        } else {
            let v = |i: usize, j: usize| values[self.flat(i, j)];
            let (i, j) = (lo[0], lo[1]);
            let (a, b) = (frac[0], frac[1]);
            Ok(v(i, j) * (1.0 - a) * (1.0 - b)
                + v(i + 1, j) * a * (1.0 - b)
                + v(i, j + 1) * (1.0 - a) * b
                + v(i + 1, j + 1) * a * b)
        }
    }
}

/// Weighted point cloud representing a probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validating constructor: nonnegative weights summing to one within
    /// [`MASS_TOL`] and pairwise distinct points.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = Self::unchecked(dim, points, weights)?;
        let total: f64 = m.weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        m.check_distinct()?;
        Ok(m)
    }

    /// Rescales the weights to unit mass.
    pub fn normalized(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateDensity);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let m = Self::unchecked(dim, points, weights)?;
        m.check_distinct()?;
        Ok(m)
    }

    /// Histogram on the cell centers of `grid`.
    pub fn on_grid(grid: &Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::invalid(format!(
                "{} weights for a grid of {} cells",
                weights.len(),
                grid.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Self::unchecked(grid.dim(), grid.points(), weights)
    }

    /// Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            points: x.to_vec(),
            weights: vec![1.0],
        }
    }

    fn unchecked(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::invalid(
                "points and weights have inconsistent lengths",
            ));
        }
        if weights.is_empty() {
            return Err(Error::invalid("empty measure"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("negative or non-finite weight {w}")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite support point"));
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    fn check_distinct(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.point(a)
                .partial_cmp(self.point(b))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in idx.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                return Err(Error::invalid(format!(
                    "repeated support point {:?}",
                    self.point(w[0])
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Number of points carrying positive mass.
    pub fn support_len(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .filter(|&i| self.weights[i] > 0.0)
            .map(|i| self.weights[i] * f(self.point(i)))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.integrate(|x| x[a])).collect()
    }

    /// Covariance matrix, row-major `d × d`.
    pub fn covariance(&self) -> Vec<f64> {
        let m = self.mean();
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                c[a * d + b] = self.integrate(|x| (x[a] - m[a]) * (x[b] - m[b]));
            }
        }
        c
    }

    /// `∫ |x|^2 dμ`.
    pub fn second_moment(&self) -> f64 {
        self.integrate(|x| x.iter().map(|c| c * c).sum())
    }

    /// Push-forward through `x ↦ factor·x`; weights are unchanged.
    pub fn pushforward_scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Ok(Self {
            dim: self.dim,
            points: self.points.iter().map(|x| x * factor).collect(),
            weights: self.weights.clone(),
        })
    }

    /// Restriction to the points with positive weight.
    pub fn trimmed(&self) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        Self {
            dim: self.dim,
            points: keep.iter().flat_map(|&i| self.point(i).to_vec()).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Writes `x[,y],w` rows with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.dim == 1 {
            w.write_record(["x", "w"])?;
        } else {
            w.write_record(["x", "y", "w"])?;
        }
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.point(i).iter().map(|c| format!("{c:.17e}")).collect();
            rec.push(format!("{:.17e}", self.weights[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv); weights are
    /// renormalized to unit mass.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let dim = match headers.len() {
            2 => 1,
            3 => 2,
            n => {
                return Err(Error::invalid(format!(
                    "expected 2 or 3 csv columns, got {n}"
                )))
            }
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("bad csv number: {e}")))?;
            points.extend_from_slice(&vals[..dim]);
            weights.push(vals[dim]);
        }
        Self::normalized(dim, points, weights)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Histogram of a nonnegative density: weights ∝ `f(center)·Δx^d`.
pub fn from_density(f: impl Fn(&[f64]) -> f64, grid: &Grid) -> Result<DiscreteMeasure> {
    let pts = grid.points();
    let d = grid.dim();
    let vol = grid.cell_volume();
    let mut weights = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let v = f(&pts[k * d..(k + 1) * d]);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!(
                "density value {v} is negative or not finite"
            )));
        }
        weights.push(v * vol);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(DiscreteMeasure {
        dim: d,
        points: pts,
        weights,
    })
}

/// Isotropic Gaussian density `N(mean, var·I)`.
pub fn gaussian_density(mean: Vec<f64>, var: f64) -> impl Fn(&[f64]) -> f64 {
    let d = mean.len() as i32;
    let norm = (2.0 * std::f64::consts::PI * var).powf(-0.5 * d as f64);
    move |x: &[f64]| {
        let r2: f64 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        norm * (-0.5 * r2 / var).exp()
    }
}

/// Space-time test function with analytic derivatives.
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64], t: f64) -> f64;
    fn time_derivative(&self, x: &[f64], t: f64) -> f64;
    fn gradient(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn laplacian(&self, x: &[f64], t: f64) -> f64;
    /// Closed box `[lo, hi]` per axis containing the spatial support;
    /// `None` for the zero function.
    fn spatial_support(&self) -> Option<Vec<(f64, f64)>>;
    /// Time interval containing the temporal support.
    fn time_support(&self) -> Option<(f64, f64)>;
}

/// The zero test function.
pub struct ZeroTest;

impl TestFunction for ZeroTest {
    fn value(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn time_derivative(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn gradient(&self, _: &[f64], _: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
    fn laplacian(&self, _: &[f64], _: f64) -> f64 {
        0.0
    }
    fn spatial_support(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
    fn time_support(&self) -> Option<(f64, f64)> {
        None
    }
}

/// `b(u) = exp(-1/(1-u²))` and its first two derivatives.
fn bump_jet(u: f64) -> (f64, f64, f64) {
    if u.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - u * u;
    let b = bump(u * u);
    let f1 = -2.0 * u / (q * q);
    let f2 = -2.0 / (q * q) - 8.0 * u * u / (q * q * q);
    (b, b * f1, b * (f1 * f1 + f2))
}

/// Product bump `Π_a b((x_a - c_a)/r) · b((t - t_c)/τ)`.
#[derive(Debug, Clone)]
pub struct SpaceTimeBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_center: f64,
    pub t_radius: f64,
}

impl SpaceTimeBump {
    fn spatial_jets(&self, x: &[f64]) -> Vec<(f64, f64, f64)> {
        x.iter()
            .zip(&self.center)
            .map(|(xa, ca)| {
                let (b, b1, b2) = bump_jet((xa - ca) / self.radius);
                (b, b1 / self.radius, b2 / (self.radius * self.radius))
            })
            .collect()
    }

    fn time_jet(&self, t: f64) -> (f64, f64) {
        let (b, b1, _) = bump_jet((t - self.t_center) / self.t_radius);
        (b, b1 / self.t_radius)
    }
}

impl TestFunction for SpaceTimeBump {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.spatial_jets(x).iter().map(|j| j.0).product::<f64>() * self.time_jet(t).0
    }

    fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        self.spatial_jets(x).iter().map(|j| j.0).product::<f64>() * self.time_jet(t).1
    }

    fn gradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let jets = self.spatial_jets(x);
        let tv = self.time_jet(t).0;
        for a in 0..jets.len() {
            let mut g = jets[a].1;
            for (b, jb) in jets.iter().enumerate() {
                if b != a {
                    g *= jb.0;
                }
            }
            out[a] = g * tv;
        }
    }

    fn laplacian(&self, x: &[f64], t: f64) -> f64 {
        let jets = self.spatial_jets(x);
        let tv = self.time_jet(t).0;
        let mut lap = 0.0;
        for a in 0..jets.len() {
            let mut term = jets[a].2;
            for (b, jb) in jets.iter().enumerate() {
                if b != a {
                    term *= jb.0;
                }
            }
            lap += term;
        }
        lap * tv
    }

    fn spatial_support(&self) -> Option<Vec<(f64, f64)>> {
        Some(
            self.center
                .iter()
                .map(|c| (c - self.radius, c + self.radius))
                .collect(),
        )
    }

    fn time_support(&self) -> Option<(f64, f64)> {
        Some((self.t_center - self.t_radius, self.t_center + self.t_radius))
    }
}

fn check_inside_box(grid: &Grid, zeta: &dyn TestFunction) -> Result<()> {
    if let Some(sup) = zeta.spatial_support() {
        let l = grid.half_extent();
        for (a, (lo, hi)) in sup.iter().enumerate() {
            if !(*lo > -l && *hi < l) {
                return Err(Error::NotCompactlySupported(format!(
                    "axis {a}: support [{lo}, {hi}] touches the box [-{l}, {l}]"
                )));
            }
        }
    }
    Ok(())
}

/// Discrete `∫∫ (∂_tζ + Δζ − B·∇ζ) dμ_t dt`: midpoint rule in space (the
/// frames are cell histograms), trapezoid rule over the stored frames.
pub fn weak_residual(
    traj: &Trajectory,
    zeta: &dyn TestFunction,
    drift: &dyn DriftField,
) -> Result<f64> {
    let grid = traj.grid();
    check_inside_box(grid, zeta)?;
    let Some((t0, t1)) = zeta.time_support() else {
        return Ok(0.0);
    };
    if !(t0 > 0.0) {
        return Err(Error::NotCompactlySupported(format!(
            "time support starts at {t0}, must be positive"
        )));
    }
    let frames = traj.frames();
    let (first, last) = (frames[0].t, frames[frames.len() - 1].t);
    if t0 < first - 1e-12 || t1 > last + 1e-12 {
        return Err(Error::invalid(format!(
            "time support [{t0}, {t1}] not covered by trajectory [{first}, {last}]"
        )));
    }
    let d = grid.dim();
    let pts = grid.points();
    let mut grad = vec![0.0; d];
    let mut b = vec![0.0; d];
    let integrand = |k: usize, t: f64, grad: &mut [f64], b: &mut [f64]| -> f64 {
        let x = &pts[k * d..(k + 1) * d];
        zeta.gradient(x, t, grad);
        drift.eval(x, t, b);
        let adv: f64 = grad.iter().zip(b.iter()).map(|(g, v)| g * v).sum();
        zeta.time_derivative(x, t) + zeta.laplacian(x, t) - adv
    };
    let mut vals = Vec::with_capacity(frames.len());
    for fr in frames {
        if fr.t < t0 || fr.t > t1 {
            vals.push(0.0);
            continue;
        }
        let mut acc = 0.0;
        for (k, w) in fr.weights.iter().enumerate() {
            if *w != 0.0 {
                acc += w * integrand(k, fr.t, &mut grad, &mut b);
            }
        }
        vals.push(acc);
    }
    let mut total = 0.0;
    for k in 1..frames.len() {
        total += 0.5 * (frames[k].t - frames[k - 1].t) * (vals[k] + vals[k - 1]);
    }
    Ok(total)
}

/// Stationary form `∫ (Δζ − B·∇ζ) dμ` with ζ frozen at its time center.
pub fn stationary_residual(
    mu: &DiscreteMeasure,
    zeta: &SpaceTimeBump,
    drift: &dyn DriftField,
) -> f64 {
    let d = mu.dim();
    let mut grad = vec![0.0; d];
    let mut b = vec![0.0; d];
    let t = zeta.t_center;
    let scale = zeta.time_jet(t).0;
    mu.integrate(|x| {
        zeta.gradient(x, t, &mut grad);
        drift.eval(x, 0.0, &mut b);
        let adv: f64 = grad.iter().zip(&b).map(|(g, v)| g * v).sum();
        (zeta.laplacian(x, t) - adv) / scale
    })
}
