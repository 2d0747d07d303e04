//! λ-monotone drift fields and their regularization ladder
//! `A → Y_n → A_n → A_{n,m}`, plus the time-rescaled field `Ã`.
//!
//! `Y_n` is the Yosida approximation of a truncation `𝖠_n` of `A` with
//! `|𝖠_n°| = min(|A°|, n)`. The truncation is exact for one-dimensional and
//! radial fields; other planar fields are used untruncated, so the `≤ n` part
//! of the bound holds only where `|A°| ≤ n` (in particular everywhere on the
//! computational box once `n` exceeds the box supremum of `|A°|`).

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature::{BallMollifier, RadialKernel};
use crate::rescale::TimeMap;

/// A vector field `ℝ^d × [0, S) → ℝ^d`.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes the field at `(x, s)` into `out`.
    fn eval(&self, x: &[f64], s: f64, out: &mut [f64]);

    fn is_autonomous(&self) -> bool {
        true
    }

    /// True when the field vanishes identically.
    fn is_zero(&self) -> bool {
        false
    }
}

impl<T: DriftField + ?Sized> DriftField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], s: f64, out: &mut [f64]) {
        (**self).eval(x, s, out)
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
    fn is_zero(&self) -> bool {
        (**self).is_zero()
    }
}

pub type CustomFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum DriftKind {
    Zero {
        dim: usize,
    },
    /// `x ↦ Mx + b`, `M` row-major.
    Linear {
        dim: usize,
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
    /// `x ↦ coef·|x|^{p-2} x`, zero at the origin.
    GradientPower {
        dim: usize,
        p: f64,
        coef: f64,
    },
    /// `sign(x)` with `sign(0) = 0`.
    Sign1d,
    Custom {
        dim: usize,
        f: CustomFn,
    },
    /// `x ↦ base(x) − shift·x`.
    Shifted {
        base: Box<DriftKind>,
        shift: f64,
    },
}

impl fmt::Debug for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftKind::Zero { dim } => write!(f, "Zero({dim}d)"),
            DriftKind::Linear { matrix, offset, .. } => {
                write!(f, "Linear(M={matrix:?}, b={offset:?})")
            }
            DriftKind::GradientPower { p, coef, .. } => {
                write!(f, "GradientPower(p={p}, coef={coef})")
            }
            DriftKind::Sign1d => write!(f, "Sign1d"),
            DriftKind::Custom { dim, .. } => write!(f, "Custom({dim}d)"),
            DriftKind::Shifted { base, shift } => write!(f, "Shifted({base:?} - {shift}·x)"),
        }
    }
}

impl DriftKind {
    fn dim(&self) -> usize {
        match self {
            DriftKind::Zero { dim }
            | DriftKind::Linear { dim, .. }
            | DriftKind::GradientPower { dim, .. }
            | DriftKind::Custom { dim, .. } => *dim,
            DriftKind::Sign1d => 1,
            DriftKind::Shifted { base, .. } => base.dim(),
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftKind::Zero { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            DriftKind::Linear {
                dim,
                matrix,
                offset,
            } => {
                for a in 0..*dim {
                    let mut v = offset[a];
                    for b in 0..*dim {
                        v += matrix[a * dim + b] * x[b];
                    }
                    out[a] = v;
                }
            }
            DriftKind::GradientPower { p, coef, .. } => {
                let r = norm(x);
                let f = if r == 0.0 {
                    0.0
                } else {
                    coef * r.powf(p - 2.0)
                };
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = f * xi;
                }
            }
            DriftKind::Sign1d => {
                out[0] = if x[0] > 0.0 {
                    1.0
                } else if x[0] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            DriftKind::Custom { f, .. } => f(x, out),
            DriftKind::Shifted { base, shift } => {
                base.eval(x, out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o -= shift * xi;
                }
            }
        }
    }

    /// Radial profile `a(r)` when the field is `a(|x|) x/|x|`.
    fn radial_profile(&self, r: f64) -> Option<f64> {
        match self {
            DriftKind::Zero { .. } => Some(0.0),
            DriftKind::GradientPower { p, coef, .. } => Some(if r == 0.0 {
                0.0
            } else {
                coef * r.powf(p - 1.0)
            }),
            DriftKind::Linear {
                dim,
                matrix,
                offset,
            } => {
                let iso = offset.iter().all(|b| *b == 0.0)
                    && (0..*dim).all(|a| (0..*dim).all(|b| a == b || matrix[a * dim + b] == 0.0))
                    && (0..*dim).all(|a| matrix[a * dim + a] == matrix[0]);
                iso.then_some(matrix[0] * r)
            }
            DriftKind::Shifted { base, shift } => base.radial_profile(r).map(|a| a - shift * r),
            _ => None,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// A drift `B` together with its claimed monotonicity constant `λ`.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    kind: DriftKind,
    lambda: f64,
}

impl DriftSpec {
    /// Validates the claim `⟨B(x)−B(y), x−y⟩ ≥ λ|x−y|²` where it is decidable.
    pub fn new(kind: DriftKind, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite"));
        }
        let bound = certified_lambda(&kind)?;
        if let Some(b) = bound {
            if lambda > b + 1e-12 {
                return Err(Error::invalid(format!(
                    "claimed lambda {lambda} exceeds the certified constant {b} of {kind:?}"
                )));
            }
        }
        Ok(Self { kind, lambda })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            kind: DriftKind::Zero { dim },
            lambda: 0.0,
        }
    }

    pub fn linear(dim: usize, matrix: Vec<f64>, offset: Vec<f64>, lambda: f64) -> Result<Self> {
        if matrix.len() != dim * dim || offset.len() != dim {
            return Err(Error::invalid(
                "matrix/offset shape does not match dimension",
            ));
        }
        Self::new(
            DriftKind::Linear {
                dim,
                matrix,
                offset,
            },
            lambda,
        )
    }

    /// `B(x) = λx` in `dim` dimensions.
    pub fn ou(dim: usize, lambda: f64) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for a in 0..dim {
            matrix[a * dim + a] = lambda;
        }
        Self {
            kind: DriftKind::Linear {
                dim,
                matrix,
                offset: vec![0.0; dim],
            },
            lambda,
        }
    }

    /// `B(x) = Mx` with `M = [[0, ω], [−ω, 0]]`.
    pub fn rotation(omega: f64) -> Self {
        Self {
            kind: DriftKind::Linear {
                dim: 2,
                matrix: vec![0.0, omega, -omega, 0.0],
                offset: vec![0.0, 0.0],
            },
            lambda: 0.0,
        }
    }

    pub fn sign() -> Self {
        Self {
            kind: DriftKind::Sign1d,
            lambda: 0.0,
        }
    }

    pub fn grad_power(dim: usize, p: f64, coef: f64, lambda: f64) -> Result<Self> {
        Self::new(DriftKind::GradientPower { dim, p, coef }, lambda)
    }

    /// Unchecked user field; the claimed `λ` is trusted.
    pub fn custom(dim: usize, lambda: f64, f: CustomFn) -> Self {
        Self {
            kind: DriftKind::Custom { dim, f },
            lambda,
        }
    }

    /// Parses a preset key: `zero`, `ou`, `sign`, `rotation[:ω]`,
    /// `linear[:m11,...]`, `grad_power:p[,coef]`.
    pub fn preset(key: &str, dim: usize, lambda: f64) -> Result<Self> {
        let (name, args) = match key.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (key.trim(), None),
        };
        let nums = |a: Option<&str>| -> Result<Vec<f64>> {
            a.map(|s| {
                s.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::invalid(format!("{key}: {e}")))
                    })
                    .collect()
            })
            .unwrap_or(Ok(Vec::new()))
        };
        let args = nums(args)?;
        let spec = match name {
            "zero" => Self::new(DriftKind::Zero { dim }, lambda)?,
            "ou" => Self::ou(dim, lambda),
            "sign" => {
                if dim != 1 {
                    return Err(Error::invalid("sign drift is one-dimensional"));
                }
                Self::new(DriftKind::Sign1d, lambda)?
            }
            "rotation" => {
                if dim != 2 {
                    return Err(Error::invalid("rotation drift is two-dimensional"));
                }
                let omega = args.first().copied().unwrap_or(1.0);
                Self::new(
                    DriftKind::Linear {
                        dim: 2,
                        matrix: vec![0.0, omega, -omega, 0.0],
                        offset: vec![0.0, 0.0],
                    },
                    lambda,
                )?
            }
            "linear" => {
                let matrix = if args.is_empty() {
                    if dim == 1 {
                        vec![2.0]
                    } else {
                        vec![2.0, 0.5, 0.5, 1.0]
                    }
                } else {
                    args
                };
                Self::linear(dim, matrix, vec![0.0; dim], lambda)?
            }
            "grad_power" => {
                let p = *args
                    .first()
                    .ok_or_else(|| Error::invalid("grad_power needs an exponent"))?;
                let coef = args.get(1).copied().unwrap_or(1.0);
                Self::grad_power(dim, p, coef, lambda)?
            }
            _ => return Err(Error::invalid(format!("unknown drift preset `{name}`"))),
        };
        Ok(spec)
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The monotone part `A = B − λI`, with claim `λ = 0`.
    pub fn centered(&self) -> DriftSpec {
        if self.lambda == 0.0 {
            return DriftSpec {
                kind: self.kind.clone(),
                lambda: 0.0,
            };
        }
        let kind = match &self.kind {
            DriftKind::Linear {
                dim,
                matrix,
                offset,
            } => {
                let mut m = matrix.clone();
                for a in 0..*dim {
                    m[a * dim + a] -= self.lambda;
                }
                if m.iter().all(|v| *v == 0.0) && offset.iter().all(|v| *v == 0.0) {
                    DriftKind::Zero { dim: *dim }
                } else {
                    DriftKind::Linear {
                        dim: *dim,
                        matrix: m,
                        offset: offset.clone(),
                    }
                }
            }
            other => DriftKind::Shifted {
                base: Box::new(other.clone()),
                shift: self.lambda,
            },
        };
        DriftSpec { kind, lambda: 0.0 }
    }

    /// Exact truncation `𝖠_n` with `|𝖠_n| ≤ n` is available.
    pub fn has_exact_truncation(&self) -> bool {
        self.dim() == 1 || self.kind.radial_profile(1.0).is_some()
    }

    /// Evaluates the truncation `𝖠_n` (see module docs).
    fn eval_truncated(&self, n: f64, x: &[f64], out: &mut [f64]) {
        self.kind.eval(x, out);
        if self.dim() == 1 {
            out[0] = out[0].clamp(-n, n);
        } else if self.kind.radial_profile(1.0).is_some() {
            let v = norm(out);
            if v > n {
                out.iter_mut().for_each(|o| *o *= n / v);
            }
        }
    }
}

impl DriftField for DriftSpec {
    fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn eval(&self, x: &[f64], _s: f64, out: &mut [f64]) {
        self.kind.eval(x, out)
    }

    fn is_zero(&self) -> bool {
        matches!(self.kind, DriftKind::Zero { .. })
    }
}

/// Largest decidable `λ` for which `kind` is λ-monotone; `None` if unknown.
fn certified_lambda(kind: &DriftKind) -> Result<Option<f64>> {
    Ok(match kind {
        DriftKind::Zero { .. } => Some(0.0),
        DriftKind::Sign1d => Some(0.0),
        DriftKind::Linear { dim, matrix, .. } => Some(min_sym_eigenvalue(*dim, matrix)),
        DriftKind::GradientPower { p, coef, .. } => {
            if *p < 1.0 || *coef < 0.0 {
                return Err(Error::invalid(format!(
                    "grad_power needs p ≥ 1 and coef ≥ 0, got p={p}, coef={coef}"
                )));
            }
            Some(if *p == 2.0 { *coef } else { 0.0 })
        }
        DriftKind::Custom { .. } => None,
        DriftKind::Shifted { base, shift } => certified_lambda(base)?.map(|l| l - shift),
    })
}

/// Smallest eigenvalue of `(M + Mᵀ)/2` for `d ≤ 2`.
pub fn min_sym_eigenvalue(dim: usize, m: &[f64]) -> f64 {
    if dim == 1 {
        return m[0];
    }
    let a = m[0];
    let b = 0.5 * (m[1] + m[2]);
    let c = m[3];
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

/// Outcome of a sampled monotonicity test.
#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub worst_ratio: f64,
    pub witness: (Vec<f64>, Vec<f64>),
    pub samples: usize,
    pub lambda: f64,
    pub passed: bool,
}

/// Samples `samples` pairs uniformly in `[-L, L]^d` and records the smallest
/// `⟨B(x)−B(y), x−y⟩/|x−y|²`.
pub fn check_lambda_monotone(
    field: &dyn DriftField,
    lambda: f64,
    samples: usize,
    half_extent: f64,
    seed: u64,
) -> MonotonicityReport {
    check_lambda_monotone_at(field, 0.0, lambda, samples, half_extent, seed)
}

/// As [`check_lambda_monotone`] for the frozen field `B(·, s)`.
pub fn check_lambda_monotone_at(
    field: &dyn DriftField,
    s: f64,
    lambda: f64,
    samples: usize,
    half_extent: f64,
    seed: u64,
) -> MonotonicityReport {
    let d = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut witness = (vec![0.0; d], vec![0.0; d]);
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let mut done = 0;
    while done < samples.max(1) {
        let x: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(-half_extent..half_extent))
            .collect();
        let y: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(-half_extent..half_extent))
            .collect();
        let diff2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        if diff2 == 0.0 {
            continue;
        }
        field.eval(&x, s, &mut bx);
        field.eval(&y, s, &mut by);
        let inner: f64 = (0..d).map(|a| (bx[a] - by[a]) * (x[a] - y[a])).sum();
        let ratio = inner / diff2;
        if ratio < worst {
            worst = ratio;
            witness = (x, y);
        }
        done += 1;
    }
    MonotonicityReport {
        worst_ratio: worst,
        witness,
        samples: done,
        lambda,
        passed: worst >= lambda - 1e-9,
    }
}

/// Regularization levels `(n, m, β_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxParams {
    pub n: usize,
    pub m: usize,
    pub beta_n: f64,
}

impl ApproxParams {
    /// `β_n = 1/n`.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        Self::with_beta(n, m, 1.0 / n.max(1) as f64)
    }

    pub fn with_beta(n: usize, m: usize, beta_n: f64) -> Result<Self> {
        if n == 0 || m == 0 || !(beta_n > 0.0) {
            return Err(Error::invalid(format!(
                "need n, m ≥ 1 and β_n > 0, got ({n}, {m}, {beta_n})"
            )));
        }
        Ok(Self { n, m, beta_n })
    }
}

const RESOLVENT_MAX_ITER: usize = 10_000;

/// Bracket width at which scalar resolvent solves stop, relative to `1 + |x|`.
const ROOT_TOL: f64 = 1e-14;

/// Root of a nondecreasing `g` on `[lo, hi]` with `g(lo) ≤ 0 ≤ g(hi)` by the
/// Illinois variant of regula falsi; also converges across jumps of `g`.
fn bracketed_root(
    mut g: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    mut glo: f64,
    mut ghi: f64,
    tol: f64,
) -> f64 {
    if glo == 0.0 {
        return lo;
    }
    if ghi == 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mut z = (lo * ghi - hi * glo) / (ghi - glo);
        if !(z > lo && z < hi) {
            z = 0.5 * (lo + hi);
        }
        let gz = g(z);
        if gz.abs() <= 1e-16 * (1.0 + z.abs()) {
            return z;
        }
        if gz > 0.0 {
            hi = z;
            ghi = gz;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = z;
            glo = gz;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (lo + hi)
}

/// Resolvent `J_n x = (I + n⁻¹𝖠_n)⁻¹ x`. On failure returns the best iterate
/// together with its residual.
fn resolvent_inner(
    a: &DriftSpec,
    n: f64,
    x: &[f64],
) -> std::result::Result<Vec<f64>, (Vec<f64>, f64, usize)> {
    let d = a.dim();
    let mut buf = vec![0.0; d];
    if d == 1 {
        let mut g = |z: f64| {
            a.eval_truncated(n, &[z], &mut buf);
            z + buf[0] / n - x[0]
        };
        let ax = g(x[0]) * n;
        let spread = (ax.abs() / n) * (1.0 + 1e-12) + 1e-300;
        let (lo, hi) = (x[0] - spread, x[0] + spread);
        let (glo, ghi) = (g(lo), g(hi));
        if glo > 0.0 || ghi < 0.0 {
            return Err((vec![x[0]], ax.abs() / n, 0));
        }
        return Ok(vec![bracketed_root(
            g,
            lo,
            hi,
            glo,
            ghi,
            ROOT_TOL * (1.0 + x[0].abs()),
        )]);
    }
    if a.kind.radial_profile(1.0).is_some() {
        let r = norm(x);
        if r == 0.0 {
            return Ok(vec![0.0; d]);
        }
        let prof = |rho: f64| a.kind.radial_profile(rho).unwrap().min(n);
        let g = |rho: f64| rho + prof(rho) / n - r;
        let (glo, ghi) = (g(0.0), g(r));
        let rho = if glo >= 0.0 {
            0.0
        } else if ghi <= 0.0 {
            r
        } else {
            bracketed_root(g, 0.0, r, glo, ghi, ROOT_TOL * (1.0 + r))
        };
        return Ok(x.iter().map(|c| c * rho / r).collect());
    }
    if let DriftKind::Linear {
        dim: 2,
        matrix: m,
        offset: b,
    } = &a.kind
    {
        // (I + M/n) z = x − b/n, untruncated off the radial case
        let (p, q, r, s) = (1.0 + m[0] / n, m[1] / n, m[2] / n, 1.0 + m[3] / n);
        let (u, v) = (x[0] - b[0] / n, x[1] - b[1] / n);
        let det = p * s - q * r;
        return Ok(vec![(s * u - q * v) / det, (p * v - r * u) / det]);
    }
    // damped fixed point z ← z − τ(z + A(z)/n − x)
    let tol = 1e-13 * (1.0 + norm(x));
    let mut z = x.to_vec();
    let residual = |z: &[f64], buf: &mut [f64]| -> (Vec<f64>, f64) {
        a.eval_truncated(n, z, buf);
        let r: Vec<f64> = (0..d).map(|i| z[i] + buf[i] / n - x[i]).collect();
        let nr = norm(&r);
        (r, nr)
    };
    let (mut r, mut nr) = residual(&z, &mut buf);
    let mut tau = 0.5;
    for it in 0..RESOLVENT_MAX_ITER {
        if nr <= tol {
            return Ok(z);
        }
        let cand: Vec<f64> = (0..d).map(|i| z[i] - tau * r[i]).collect();
        let (rc, nc) = residual(&cand, &mut buf);
        if nc > nr {
            tau *= 0.5;
            if tau < 1e-12 {
                return Err((z, nr, it));
            }
            continue;
        }
        z = cand;
        r = rc;
        nr = nc;
    }
    if nr <= tol {
        Ok(z)
    } else {
        Err((z, nr, RESOLVENT_MAX_ITER))
    }
}

/// Resolvent `(I + n⁻¹𝖠_n)⁻¹ x` of the monotone field `a`.
pub fn resolvent(a: &DriftSpec, n: usize, x: &[f64]) -> Result<Vec<f64>> {
    resolvent_inner(a, n as f64, x).map_err(|(_, residual, iterations)| Error::ResolventFailed {
        residual,
        iterations,
    })
}

/// Yosida approximation `Y_n(x) = n(x − J_n x)` of the monotone field `a`.
pub fn yosida(a: &DriftSpec, n: usize, x: &[f64]) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("yosida needs n ≥ 1"));
    }
    let z = resolvent(a, n, x)?;
    Ok(x.iter()
        .zip(&z)
        .map(|(xi, zi)| n as f64 * (xi - zi))
        .collect())
}

/// `A_n = Y_n ∗ κ_η`, `η = β_n/(n k)`, realized as a convex combination of
/// shifted Yosida evaluations.
pub struct MollifiedYosida {
    a: DriftSpec,
    params: ApproxParams,
    kernel: BallMollifier,
    eta: f64,
    failures: AtomicUsize,
}

impl MollifiedYosida {
    /// `a` must be monotone (already centered).
    pub fn new(a: DriftSpec, params: ApproxParams) -> Self {
        let kernel = BallMollifier::new(a.dim());
        let eta = params.beta_n / (params.n as f64 * kernel.mean_radius());
        Self {
            a,
            params,
            kernel,
            eta,
            failures: AtomicUsize::new(0),
        }
    }

    pub fn params(&self) -> ApproxParams {
        self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of resolvent solves that stopped above tolerance.
    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }
}

impl DriftField for MollifiedYosida {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn eval(&self, x: &[f64], _s: f64, out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.a.is_zero() {
            return;
        }
        let n = self.params.n as f64;
        let mut y = vec![0.0; d];
        for i in 0..self.kernel.len() {
            let z = self.kernel.node(i);
            for a in 0..d {
                y[a] = x[a] - self.eta * z[a];
            }
            let j = match resolvent_inner(&self.a, n, &y) {
                Ok(j) => j,
                Err((j, _, _)) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    j
                }
            };
            let w = self.kernel.weight(i);
            for a in 0..d {
                out[a] += w * n * (y[a] - j[a]);
            }
        }
    }

    fn is_zero(&self) -> bool {
        self.a.is_zero()
    }
}

/// Pointwise `A_n(x)`.
pub fn smooth_bounded_approx(a: &DriftSpec, params: ApproxParams, x: &[f64]) -> Vec<f64> {
    let f = MollifiedYosida::new(a.clone(), params);
    let mut out = vec![0.0; x.len()];
    f.eval(x, 0.0, &mut out);
    out
}

/// `A_{n,m}(x) = ∫_0^2 A_n(x e^{−u/m}) κ(u) du`.
pub struct RadialSmoothing {
    inner: Arc<dyn DriftField>,
    m: usize,
    kernel: RadialKernel,
}

impl RadialSmoothing {
    pub fn new(inner: Arc<dyn DriftField>, m: usize) -> Self {
        Self {
            inner,
            m: m.max(1),
            kernel: RadialKernel::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

impl DriftField for RadialSmoothing {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &[f64], s: f64, out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        if self.inner.is_zero() {
            return;
        }
        let mut y = vec![0.0; d];
        let mut v = vec![0.0; d];
        for (u, w) in self.kernel.nodes().iter().zip(self.kernel.weights()) {
            let r = (-u / self.m as f64).exp();
            for a in 0..d {
                y[a] = r * x[a];
            }
            self.inner.eval(&y, s, &mut v);
            for a in 0..d {
                out[a] += w * v[a];
            }
        }
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

/// Pointwise `A_{n,m}(x)` of an arbitrary field.
pub fn radial_smooth(field: Arc<dyn DriftField>, m: usize, x: &[f64]) -> Vec<f64> {
    let r = RadialSmoothing::new(field, m);
    let mut out = vec![0.0; x.len()];
    r.eval(x, 0.0, &mut out);
    out
}

/// The full ladder `A_{n,m}` of a monotone spec.
pub fn ladder(a: &DriftSpec, params: ApproxParams) -> RadialSmoothing {
    RadialSmoothing::new(Arc::new(MollifiedYosida::new(a.clone(), params)), params.m)
}

/// `Ã(y, s) = e^{−λt(s)} A(e^{−λt(s)} y)`.
pub struct Rescaled {
    inner: Arc<dyn DriftField>,
    map: TimeMap,
}

impl Rescaled {
    pub fn new(inner: Arc<dyn DriftField>, map: TimeMap) -> Self {
        Self { inner, map }
    }

    pub fn time_map(&self) -> TimeMap {
        self.map
    }
}

impl DriftField for Rescaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, y: &[f64], s: f64, out: &mut [f64]) {
        let f = if self.map.lambda() == 0.0 {
            1.0
        } else {
            (-self.map.lambda() * self.map.t_of_s_unchecked(s)).exp()
        };
        let x: Vec<f64> = y.iter().map(|c| f * c).collect();
        let t = if self.map.lambda() == 0.0 {
            s
        } else {
            self.map.t_of_s_unchecked(s)
        };
        self.inner.eval(&x, t, out);
        out.iter_mut().for_each(|o| *o *= f);
    }

    fn is_autonomous(&self) -> bool {
        self.map.lambda() == 0.0 && self.inner.is_autonomous()
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

/// `Ã(y, s)` for `A = B − λI`.
pub fn rescaled_drift(b: &DriftSpec, s: f64, y: &[f64]) -> Result<Vec<f64>> {
    let map = TimeMap::new(b.lambda());
    map.t_of_s(s)?;
    let r = Rescaled::new(Arc::new(b.centered()), map);
    let mut out = vec![0.0; y.len()];
    r.eval(y, s, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_field_has_unit_ratio() {
        let b = DriftSpec::ou(1, 1.0);
        let r = check_lambda_monotone(&b, 1.0, 200, 4.0, 0);
        assert!((r.worst_ratio - 1.0).abs() < 1e-12 && r.passed);
    }

    #[test]
    fn rotation_is_monotone_with_zero_ratio() {
        for omega in [0.3, 1.0, 5.0] {
            let r = check_lambda_monotone(&DriftSpec::rotation(omega), 0.0, 500, 4.0, 7);
            assert!(r.worst_ratio.abs() < 1e-12 && r.passed);
        }
    }

    #[test]
    fn sign_is_monotone() {
        let r = check_lambda_monotone(&DriftSpec::sign(), 0.0, 2000, 3.0, 1);
        assert!(r.worst_ratio >= 0.0 && r.passed);
    }

    #[test]
    fn false_lambda_claims_are_rejected() {
        assert!(DriftSpec::linear(2, vec![0.0, 1.0, -1.0, 0.0], vec![0.0, 0.0], 0.5).is_err());
        assert!(DriftSpec::preset("sign", 1, 1.0).is_err());
        assert!(DriftSpec::preset("linear:2,0.5,0.5,1", 2, 0.5).is_ok());
        let r = check_lambda_monotone(&DriftSpec::rotation(1.0), 0.5, 100, 2.0, 0);
        assert!(!r.passed);
    }

    #[test]
    fn eigenvalue_of_symmetric_part() {
        assert!((min_sym_eigenvalue(2, &[2.0, 0.0, 0.0, 3.0]) - 2.0).abs() < 1e-15);
        assert!((min_sym_eigenvalue(2, &[1.0, 1.0, 1.0, 1.0])).abs() < 1e-15);
    }

    #[test]
    fn centered_ou_is_zero() {
        let b = DriftSpec::ou(2, 1.3);
        assert!(b.centered().is_zero());
        let s = DriftSpec::preset("sign", 1, -0.5).unwrap().centered();
        let mut out = [0.0];
        s.eval(&[2.0], 0.0, &mut out);
        assert_eq!(out[0], 2.0);
    }

    #[test]
    fn yosida_of_identity_is_scaled_identity() {
        let a = DriftSpec::ou(1, 1.0).centered();
        assert!(a.is_zero());
        let id = DriftSpec::linear(1, vec![1.0], vec![0.0], 0.0).unwrap();
        for n in [1usize, 4, 32] {
            for x in [-3.0, -0.2, 0.0, 0.7, 2.5] {
                let y = yosida(&id, n, &[x]).unwrap()[0];
                let nf = n as f64;
                // the truncation |𝖠_n| ≤ n only bites beyond |x| = n + 1
                let expect = if x.abs() <= nf + 1.0 {
                    x * nf / (nf + 1.0)
                } else {
                    nf * x.signum()
                };
                assert!((y - expect).abs() < 1e-12, "{n} {x} {y}");
            }
        }
        let id2 = DriftSpec::linear(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.0).unwrap();
        let y = yosida(&id2, 8, &[1.0, -2.0]).unwrap();
        assert!((y[0] - 8.0 / 9.0).abs() < 1e-12 && (y[1] + 16.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn yosida_of_sign_closed_form() {
        let a = DriftSpec::sign();
        for n in [1usize, 3, 10, 64] {
            let nf = n as f64;
            for x in [-2.0, -0.05, 0.0, 0.004, 0.3, 1.0] {
                let y = yosida(&a, n, &[x]).unwrap()[0];
                let expect = if x.abs() <= 1.0 / nf {
                    nf * x
                } else {
                    x.signum()
                };
                assert!((y - expect).abs() < 1e-12, "n={n} x={x} y={y}");
            }
        }
    }

    #[test]
    fn yosida_of_rotation_matches_linear_algebra() {
        let a = DriftSpec::rotation(1.0);
        let n = 2.0;
        let x = [0.7, -1.2];
        // (I + J/n)^{-1} for J = [[0,1],[-1,0]]: (I − J/n)/(1 + 1/n²)
        let det = 1.0 + 1.0 / (n * n);
        let z = [(x[0] - x[1] / n) / det, (x[1] + x[0] / n) / det];
        let y = yosida(&a, 2, &x).unwrap();
        for k in 0..2 {
            assert!((y[k] - n * (x[k] - z[k])).abs() < 1e-11);
        }
    }

    #[test]
    fn mollified_yosida_stays_within_bounds() {
        let a = DriftSpec::sign();
        let p = ApproxParams::new(8, 16).unwrap();
        let v = smooth_bounded_approx(&a, p, &[0.0])[0];
        assert!(v.abs() <= p.beta_n);
        let far = smooth_bounded_approx(&a, p, &[1.0])[0];
        assert!((far - 1.0).abs() <= p.beta_n);
    }

    #[test]
    fn radial_smoothing_preserves_constants() {
        let c: Arc<dyn DriftField> = Arc::new(DriftSpec::custom(
            2,
            0.0,
            Arc::new(|_x: &[f64], out: &mut [f64]| {
                out[0] = 0.3;
                out[1] = -1.1;
            }),
        ));
        for m in [1, 8, 64] {
            let v = radial_smooth(c.clone(), m, &[2.0, 5.0]);
            assert!((v[0] - 0.3).abs() < 1e-13 && (v[1] + 1.1).abs() < 1e-13);
        }
    }

    #[test]
    fn rescaled_drift_examples() {
        let lin = DriftSpec::linear(1, vec![2.0], vec![0.0], 0.0).unwrap();
        let v = rescaled_drift(&lin, 3.0, &[1.5]).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-15);
        assert_eq!(
            rescaled_drift(&DriftSpec::ou(1, 1.0), 2.0, &[4.0]).unwrap()[0],
            0.0
        );
        let b = DriftSpec::linear(1, vec![3.0], vec![0.0], 1.0).unwrap();
        let s = ((2.0f64).exp() - 1.0) / 2.0;
        let v = rescaled_drift(&b, s, &[2.0]).unwrap()[0];
        let e = (-1.0f64).exp();
        assert!((v - e * 2.0 * (e * 2.0)).abs() < 1e-12);
        let neg = DriftSpec::ou(1, -1.0);
        assert!(matches!(
            rescaled_drift(&neg, 0.5, &[1.0]),
            Err(Error::RescaledTimeOutOfRange { .. })
        ));
    }
}
