//! Time and space rescaling that turns λ-monotone dynamics into monotone ones.
//!
//! `s(t) = (e^{2λt} − 1)/(2λ)`, `σ_s = (e^{λt(s)}·)_# ρ_{t(s)}`. For `λ = 0`
//! both maps are the identity.

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::fp_forward::Trajectory;
use crate::measures::{DiscreteMeasure, Grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMap {
    lambda: f64,
}

impl TimeMap {
    pub fn new(lambda: f64) -> Self {
        Self { lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `S_∞`: `+∞` for `λ ≥ 0`, `−1/(2λ)` otherwise.
    pub fn s_inf(&self) -> f64 {
        if self.lambda < 0.0 {
            -0.5 / self.lambda
        } else {
            f64::INFINITY
        }
    }

    pub fn s_of_t(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("time {t} must be nonnegative")));
        }
        Ok(self.s_of_t_unchecked(t))
    }

    pub fn s_of_t_unchecked(&self, t: f64) -> f64 {
        if self.lambda == 0.0 {
            t
        } else {
            (2.0 * self.lambda * t).exp_m1() / (2.0 * self.lambda)
        }
    }

    pub fn t_of_s(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) || s >= self.s_inf() {
            return Err(Error::RescaledTimeOutOfRange {
                s,
                s_inf: self.s_inf(),
            });
        }
        Ok(self.t_of_s_unchecked(s))
    }

    pub fn t_of_s_unchecked(&self, s: f64) -> f64 {
        if self.lambda == 0.0 {
            s
        } else {
            (2.0 * self.lambda * s).ln_1p() / (2.0 * self.lambda)
        }
    }

    /// Spatial factor `e^{λt}`.
    pub fn space_factor(&self, t: f64) -> f64 {
        (self.lambda * t).exp()
    }
}

/// One rescaled frame: `σ_s` built from `ρ_t`, `s = s(t)`.
#[derive(Debug, Clone)]
pub struct RescaledFrame {
    pub s: f64,
    pub t: f64,
    pub measure: DiscreteMeasure,
}

/// A forward trajectory re-indexed by rescaled time.
#[derive(Debug, Clone)]
pub struct RescaledTrajectory {
    map: TimeMap,
    grid: Grid,
    source: Trajectory,
    frames: Vec<RescaledFrame>,
}

impl RescaledTrajectory {
    pub fn time_map(&self) -> TimeMap {
        self.map
    }

    pub fn frames(&self) -> &[RescaledFrame] {
        &self.frames
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `σ_s` at an arbitrary `s`; weights are interpolated linearly in `t`
    /// between stored frames before the push-forward.
    pub fn sigma_at(&self, s: f64) -> Result<DiscreteMeasure> {
        let t = self.map.t_of_s(s)?;
        let w = self.source.weights_at(t)?;
        let rho = DiscreteMeasure::on_grid(&self.grid, w)?;
        rho.pushforward_scale(self.map.space_factor(t))
    }
}

/// Rescales every stored frame of `traj`.
pub fn rescale_trajectory(traj: &Trajectory, lambda: f64) -> Result<RescaledTrajectory> {
    let map = TimeMap::new(lambda);
    let grid = *traj.grid();
    let mut frames = Vec::with_capacity(traj.frames().len());
    for k in 0..traj.frames().len() {
        let t = traj.frames()[k].t;
        let s = map.s_of_t(t)?;
        let measure = traj.measure(k)?.pushforward_scale(map.space_factor(t))?;
        frames.push(RescaledFrame { s, t, measure });
    }
    Ok(RescaledTrajectory {
        map,
        grid,
        source: traj.clone(),
        frames,
    })
}

/// Both sides of the integrability transfer between the two frames:
/// `(∫∫|Ã| dσ_s ds, ∫ e^{λt} ∫|B − λx| dρ_t dt)`, each by the trapezoid rule
/// in its own time variable. `b` is the original drift `B`.
pub fn integrability_sums(rescaled: &RescaledTrajectory, b: &dyn DriftField) -> (f64, f64) {
    let lambda = rescaled.map.lambda();
    let d = b.dim();
    let mut v = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut lhs_vals = Vec::new();
    let mut rhs_vals = Vec::new();
    for fr in &rescaled.frames {
        let f = (-lambda * fr.t).exp();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mu = &fr.measure;
        for i in 0..mu.len() {
            let w = mu.weights()[i];
            if w == 0.0 {
                continue;
            }
            // x = e^{−λt} y is the original support point
            for a in 0..d {
                y[a] = f * mu.point(i)[a];
            }
            b.eval(&y, fr.t, &mut v);
            let a_norm = (0..d)
                .map(|a| (v[a] - lambda * y[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            lhs += w * f * a_norm;
            rhs += w * a_norm;
        }
        lhs_vals.push(lhs);
        rhs_vals.push(rhs / f);
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for k in 1..rescaled.frames.len() {
        let (a, b) = (&rescaled.frames[k - 1], &rescaled.frames[k]);
        lhs += 0.5 * (b.s - a.s) * (lhs_vals[k] + lhs_vals[k - 1]);
        rhs += 0.5 * (b.t - a.t) * (rhs_vals[k] + rhs_vals[k - 1]);
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_map_examples() {
        assert_eq!(TimeMap::new(0.0).s_of_t(1.7).unwrap(), 1.7);
        assert!((TimeMap::new(-1.0).s_inf() - 0.5).abs() < 1e-15);
        assert_eq!(TimeMap::new(2.0).s_inf(), f64::INFINITY);
        let s = TimeMap::new(1.0).s_of_t(1.0).unwrap();
        assert!((s - ((2.0f64).exp() - 1.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn round_trip() {
        for lambda in [-1.0, -0.3, 0.0, 0.3, 1.0] {
            let map = TimeMap::new(lambda);
            for k in 0..=40 {
                let t = k as f64 * 0.05;
                let s = map.s_of_t(t).unwrap();
                if s < map.s_inf() {
                    assert!(
                        (map.t_of_s(s).unwrap() - t).abs() < 1e-12,
                        "λ={lambda} t={t}"
                    );
                }
            }
        }
    }

    #[test]
    fn out_of_range() {
        let map = TimeMap::new(-1.0);
        assert!(matches!(
            map.t_of_s(0.5),
            Err(Error::RescaledTimeOutOfRange { .. })
        ));
        assert!(map.t_of_s(0.4999).is_ok());
        assert!(map.t_of_s(-0.1).is_err());
    }
}
