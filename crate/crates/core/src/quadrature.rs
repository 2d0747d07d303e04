//! Gauss–Legendre rules and the compactly supported C^∞ bump kernels used by
//! the drift regularizations and the potential mollifier.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            nodes[0] = 0.0;
            weights[0] = 2.0;
            break;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
pub fn composite_gauss_legendre(
    a: f64,
    b: f64,
    panels: usize,
    per_panel: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(per_panel);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * h * (xi + 1.0));
            weights.push(0.5 * h * wi);
        }
    }
    (nodes, weights)
}

/// Unnormalized bump `exp(1/(r²-1))` for `r² < 1`, zero otherwise.
pub fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 / (r2 - 1.0)).exp()
    }
}

/// Discretized mollifier `κ` on the unit ball of ℝ^d (d = 1, 2).
///
/// Weights are renormalized so that they sum to one exactly; the discrete
/// first absolute moment `k = Σ w |z|` is what the regularizations use, so
/// the bound `|f∗κ_η − f| ≤ η k Lip(f)` holds for the discrete rule too.
#[derive(Debug, Clone)]
pub struct BallMollifier {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    mean_radius: f64,
}

impl BallMollifier {
    pub fn new(dim: usize) -> Self {
        match dim {
            1 => Self::with_resolution(1, 48, 0),
            2 => Self::with_resolution(2, 10, 16),
            _ => panic!("only d = 1, 2 supported"),
        }
    }

    /// `radial` Gauss nodes; `angular` equally spaced directions (2D only, must be even).
    pub fn with_resolution(dim: usize, radial: usize, angular: usize) -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            let (x, w) = gauss_legendre(radial);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(*xi);
                weights.push(wi * bump(xi * xi));
            }
        } else {
            assert!(
                angular >= 2 && angular.is_multiple_of(2),
                "angular resolution must be even"
            );
            let (r, w) = composite_gauss_legendre(0.0, 1.0, 1, radial);
            for (ri, wi) in r.iter().zip(&w) {
                for k in 0..angular {
                    let th = 2.0 * PI * (k as f64 + 0.5) / angular as f64;
                    nodes.push(ri * th.cos());
                    nodes.push(ri * th.sin());
                    weights.push(wi * ri * bump(ri * ri));
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut mean_radius = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let z = &nodes[i * dim..(i + 1) * dim];
            mean_radius += w * z.iter().map(|c| c * c).sum::<f64>().sqrt();
        }
        Self {
            dim,
            nodes,
            weights,
            mean_radius,
        }
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

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Discrete `k = ∫|z| κ(z) dz`.
    pub fn mean_radius(&self) -> f64 {
        self.mean_radius
    }
}

/// One-dimensional kernel supported in `[0, 2]`, peaked at 1, symmetric about 1
/// and monotone on each side; integrates to one. Used for the radial smoothing.
#[derive(Debug, Clone)]
pub struct RadialKernel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    peak: f64,
}

impl RadialKernel {
    pub fn new() -> Self {
        Self::with_nodes(4, 64)
    }

    pub fn with_nodes(panels: usize, per_panel: usize) -> Self {
        let (u, w) = composite_gauss_legendre(0.0, 2.0, panels, per_panel);
        let raw: Vec<f64> = u
            .iter()
            .zip(&w)
            .map(|(ui, wi)| wi * bump((ui - 1.0) * (ui - 1.0)))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|x| x / total).collect();
        Self {
            nodes: u,
            weights,
            peak: bump(0.0) / total,
        }
    }

    /// Kernel value `κ(u)`.
    pub fn density(&self, u: f64) -> f64 {
        self.peak / bump(0.0) * bump((u - 1.0) * (u - 1.0))
    }

    /// `κ(1)`, the maximum of the kernel.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for RadialKernel {
    fn default() -> Self {
        Self::new()
    }
}
