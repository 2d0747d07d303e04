//! Closed-form oracle suite run by `fpcontract selftest`.

use std::path::Path;

use super::config::ExperimentConfig;
use super::contraction::run_contraction;
use crate::backward::solve_backward;
use crate::costs::{h_transform, CostFn};
use crate::drift::{yosida, DriftSpec};
use crate::error::Result;
use crate::fp_forward::SolverConfig;
use crate::measures::{from_density, gaussian_density, DiscreteMeasure, Grid};
use crate::ot::Solver;
use crate::rescale::TimeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn line(name: &'static str, check: impl FnOnce() -> Result<(bool, String)>) -> SelfTestLine {
    match check() {
        Ok((passed, detail)) => SelfTestLine {
            name,
            passed,
            detail,
        },
        Err(e) => SelfTestLine {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn contraction_cfg(drift: &str, lambda: f64, mu1: &str, mu2: &str) -> Result<ExperimentConfig> {
    let text = format!(
        "drift = {drift}\nlambda = {lambda}\ncost = power:2\nmu1 = {mu1}\nmu2 = {mu2}\n\
         grid.L = 8\ngrid.n = 320\nT = 1\ncheckpoints = 0.25,0.5,1\nuniqueness = false\n"
    );
    ExperimentConfig::parse(&text, Path::new("."))
}

fn ratio_check(cfg: &ExperimentConfig, tol: f64) -> Result<(bool, String)> {
    let rep = run_contraction(cfg)?;
    let worst = rep
        .rows
        .iter()
        .filter_map(|r| Some((r.ratio? / r.expected_ratio? - 1.0).abs()))
        .fold(0.0, f64::max);
    Ok((
        rep.passed() && worst <= tol,
        format!(
            "worst relative ratio error {worst:.3e}, report passed = {}",
            rep.passed()
        ),
    ))
}

/// Runs every check; the suite passes iff every line passes.
pub fn selftest() -> Vec<SelfTestLine> {
    vec![
        line("gaussian_histogram_moments", || {
            let g = Grid::new(1, 8.0, 320)?;
            let mu = from_density(gaussian_density(vec![0.3], 0.5), &g)?;
            let (m, v) = (mu.mean()[0], mu.covariance()[0]);
            let err = (m - 0.3).abs().max((v - 0.5).abs());
            Ok((err < 1e-6, format!("mean {m:.9}, variance {v:.9}")))
        }),
        line("time_map_round_trip", || {
            let mut worst: f64 = 0.0;
            for lambda in [-1.0, 0.0, 0.7] {
                let map = TimeMap::new(lambda);
                for t in [0.0, 0.1, 0.3] {
                    worst = worst.max((map.t_of_s(map.s_of_t(t)?)? - t).abs());
                }
            }
            Ok((worst < 1e-14, format!("worst error {worst:.3e}")))
        }),
        line("transport_half_mass", || {
            let a = DiscreteMeasure::dirac(&[0.0]);
            let b = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5])?;
            let r = Solver::lp_only().solve(&a, &b, &CostFn::power(1.0)?)?;
            Ok((
                (r.cost - 0.5).abs() < 1e-12 && r.gap.abs() < 1e-12,
                format!("cost {}, gap {:e}", r.cost, r.gap),
            ))
        }),
        line("quantile_path_matches_lp", || {
            let a = DiscreteMeasure::normalized(
                1,
                vec![-1.0, 0.2, 0.5, 2.0],
                vec![0.1, 0.4, 0.3, 0.2],
            )?;
            let b = DiscreteMeasure::normalized(1, vec![-0.5, 0.0, 1.5], vec![0.5, 0.25, 0.25])?;
            let h = CostFn::power(2.0)?;
            let fast = Solver::default().solve(&a, &b, &h)?;
            let lp = Solver::lp_only().solve(&a, &b, &h)?;
            let diff = (fast.cost - lp.cost).abs();
            Ok((
                diff < 1e-9 && fast.fast_path,
                format!("difference {diff:.3e}"),
            ))
        }),
        line("yosida_linear_closed_form", || {
            let a = DriftSpec::linear(1, vec![2.0], vec![0.0], 0.0)?;
            let mut worst: f64 = 0.0;
            for n in [1usize, 4, 16] {
                for x in [-0.4, 0.1, 0.45] {
                    let y = yosida(&a, n, &[x])?[0];
                    worst = worst.max((y - 2.0 * n as f64 * x / (n as f64 + 2.0)).abs());
                }
            }
            Ok((worst < 1e-9, format!("worst error {worst:.3e}")))
        }),
        line("backward_constants", || {
            let g = Grid::new(2, 2.0, 16)?;
            let sol = solve_backward(
                &vec![0.25; g.len()],
                &DriftSpec::rotation(1.0),
                &SolverConfig::auto(g, 0.2),
            )?;
            let worst = sol
                .initial()
                .iter()
                .map(|v| (v - 0.25).abs())
                .fold(0.0, f64::max);
            Ok((worst < 1e-14, format!("worst deviation {worst:.3e}")))
        }),
        line("h_transform_idempotence", || {
            let g = Grid::new(1, 2.0, 64)?;
            let h = CostFn::power(2.0)?;
            let zeta: Vec<f64> = g.points().iter().map(|x| (3.0 * x).sin()).collect();
            let once = h_transform(&zeta, &h, &g);
            let thrice = h_transform(&h_transform(&once, &h, &g), &h, &g);
            let worst = once
                .iter()
                .zip(&thrice)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((worst == 0.0, format!("worst deviation {worst:.3e}")))
        }),
        line("ou_wasserstein_ratio", || {
            ratio_check(
                &contraction_cfg("ou", 1.0, "gaussian:-0.5:0.09", "gaussian:0.5:0.09")?,
                0.02,
            )
        }),
        line("heat_translation_invariance", || {
            ratio_check(
                &contraction_cfg("zero", 0.0, "gaussian:-0.5:0.09", "gaussian:0.5:0.09")?,
                0.02,
            )
        }),
    ]
}
