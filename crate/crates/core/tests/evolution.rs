//! Measures, forward evolution and the rescaled frame against closed forms.

use std::sync::Arc;

use fpcontract::costs::rescale_cost;
use fpcontract::drift::{DriftField, Rescaled};
use fpcontract::fp_forward::{evolve, evolve_rescaled};
use fpcontract::measures::{
    from_density, gaussian_density, weak_residual, SpaceTimeBump, ZeroTest,
};
use fpcontract::ot::{transport_cost, wasserstein_p};
use fpcontract::rescale::{integrability_sums, rescale_trajectory, TimeMap};
use fpcontract::{CostFn, DiscreteMeasure, DriftSpec, Error, Grid, SolverConfig, Trajectory};
use proptest::prelude::*;

fn grid1(l: f64, n: usize) -> Grid {
    Grid::new(1, l, n).unwrap()
}

fn gaussian(grid: &Grid, mean: f64, var: f64) -> DiscreteMeasure {
    from_density(gaussian_density(vec![mean; grid.dim()], var), grid).unwrap()
}

#[test]
fn standard_gaussian_histogram_is_centered() {
    let mu = gaussian(&grid1(8.0, 256), 0.0, 1.0);
    assert!((mu.total_mass() - 1.0).abs() < 1e-12);
    assert!(mu.mean()[0].abs() < 1e-6);
}

#[test]
fn constant_density_is_uniform() {
    let mu = from_density(|_| 1.0, &grid1(1.0, 4)).unwrap();
    assert_eq!(mu.weights(), &[0.25; 4]);
}

#[test]
fn gaussian_second_moment_matches_cell_quadrature() {
    let g = grid1(8.0, 512);
    let mu = gaussian(&g, 0.5, 0.04);
    // independent quadrature of the same density on the same cells
    let xs = g.points();
    let f: Vec<f64> = xs
        .iter()
        .map(|x| (-(x - 0.5) * (x - 0.5) / 0.08).exp())
        .collect();
    let z: f64 = f.iter().sum();
    let m: f64 = xs.iter().zip(&f).map(|(x, w)| x * w).sum::<f64>() / z;
    let v: f64 = xs
        .iter()
        .zip(&f)
        .map(|(x, w)| (x - m) * (x - m) * w)
        .sum::<f64>()
        / z;
    assert!((mu.covariance()[0] - v).abs() < 1e-12);
    assert!((v - 0.04).abs() < 1e-4);
}

#[test]
fn pushforward_examples() {
    let mu = gaussian(&grid1(4.0, 64), 1.0, 0.25);
    let same = mu.pushforward_scale(1.0).unwrap();
    assert_eq!(same.points(), mu.points());
    let x = DiscreteMeasure::dirac(&[2.0])
        .pushforward_scale((2f64.ln()).exp())
        .unwrap();
    assert!((x.point(0)[0] - 4.0).abs() < 1e-12);
    let g = grid1(8.0, 320);
    let scaled = gaussian(&g, 1.0, 0.09).pushforward_scale(3.0).unwrap();
    assert!((scaled.mean()[0] - 3.0).abs() < g.dx());
    assert!(mu.pushforward_scale(0.0).is_err());
    assert!(mu.pushforward_scale(-1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pushforward_round_trip(a in 0.05f64..20.0, seed in 0u64..1000) {
        let n = 8 + (seed % 24) as usize;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37 + seed as f64 * 0.01).sin() * 3.0 + i as f64 * 1e-3).collect();
        let w: Vec<f64> = (0..n).map(|i| 1.0 + ((i as u64 * 7 + seed) % 5) as f64).collect();
        let mu = DiscreteMeasure::normalized(1, pts, w).unwrap();
        let back = mu.pushforward_scale(a).unwrap().pushforward_scale(1.0 / a).unwrap();
        for (p, q) in back.points().iter().zip(mu.points()) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
        prop_assert_eq!(back.weights(), mu.weights());
    }

    #[test]
    fn histograms_are_probability_measures(mean in -2.0f64..2.0, var in 0.05f64..2.0, n in 8usize..200) {
        let mu = gaussian(&grid1(8.0, n), mean, var);
        prop_assert!((mu.total_mass() - 1.0).abs() <= 1e-12);
        prop_assert!(mu.weights().iter().all(|w| *w >= 0.0));
    }
}

#[test]
fn zero_test_function_has_zero_residual() {
    let g = grid1(4.0, 64);
    let traj = Trajectory::constant(
        g,
        gaussian(&g, 0.0, 1.0).weights().to_vec(),
        &[0.0, 0.5, 1.0],
    );
    assert_eq!(
        weak_residual(&traj, &ZeroTest, &DriftSpec::zero(1)).unwrap(),
        0.0
    );
}

#[test]
fn test_function_touching_the_boundary_is_rejected() {
    let g = grid1(2.0, 64);
    let traj = Trajectory::constant(g, gaussian(&g, 0.0, 0.2).weights().to_vec(), &[0.0, 1.0]);
    let zeta = SpaceTimeBump {
        center: vec![1.5],
        radius: 0.6,
        t_center: 0.5,
        t_radius: 0.25,
    };
    let err = weak_residual(&traj, &zeta, &DriftSpec::zero(1)).unwrap_err();
    assert!(matches!(err, Error::NotCompactlySupported(_)), "{err}");
}

#[test]
fn ou_invariant_measure_is_weakly_stationary() {
    let g = grid1(8.0, 320);
    let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.005).collect();
    let traj = Trajectory::constant(g, gaussian(&g, 0.0, 1.0).weights().to_vec(), &times);
    let zeta = SpaceTimeBump {
        center: vec![0.3],
        radius: 1.5,
        t_center: 0.5,
        t_radius: 0.4,
    };
    let r = weak_residual(&traj, &zeta, &DriftSpec::ou(1, 1.0)).unwrap();
    assert!(r.abs() <= g.dx() * g.dx(), "residual {r}");
}

fn heat_residual(n: usize, dt: f64) -> f64 {
    let g = grid1(4.0, n);
    let rho0 = gaussian(&g, 0.0, 0.25);
    let traj = evolve(&rho0, &DriftSpec::zero(1), &SolverConfig::new(g, dt, 0.5)).unwrap();
    let zeta = SpaceTimeBump {
        center: vec![0.2],
        radius: 1.2,
        t_center: 0.25,
        t_radius: 0.2,
    };
    weak_residual(&traj, &zeta, &DriftSpec::zero(1)).unwrap()
}

#[test]
fn weak_residual_halves_under_refinement() {
    let coarse = heat_residual(80, 2e-3);
    let fine = heat_residual(160, 1e-3);
    assert!(
        coarse.abs() >= 2.0 * fine.abs(),
        "coarse {coarse:e}, fine {fine:e}"
    );
}

#[test]
fn heat_variance_grows_by_two_t() {
    let g = grid1(8.0, 320);
    let traj = evolve(
        &gaussian(&g, 0.0, 0.25),
        &DriftSpec::zero(1),
        &SolverConfig::auto(g, 1.0),
    )
    .unwrap();
    let v = traj.final_measure().unwrap().covariance()[0];
    assert!((v / 2.25 - 1.0).abs() < 0.01, "variance {v}");
    let d = traj.diagnostics();
    assert!(d.max_mass_drift <= 1e-12 && d.min_weight >= 0.0);
}

#[test]
fn ou_mean_decays_exponentially() {
    let g = grid1(8.0, 320);
    let traj = evolve(
        &gaussian(&g, 1.0, 0.09),
        &DriftSpec::ou(1, 1.0),
        &SolverConfig::auto(g, 1.0),
    )
    .unwrap();
    let mu = traj.final_measure().unwrap();
    let e = (-1f64).exp();
    assert!((mu.mean()[0] / e - 1.0).abs() < 0.01);
    let var = 0.09 * e * e + 1.0 - e * e;
    assert!((mu.covariance()[0] / var - 1.0).abs() < 0.01);
}

#[test]
fn gradient_drift_invariant_measure_is_stationary() {
    let g = grid1(8.0, 320);
    let rho = gaussian(&g, 0.0, 1.0);
    let traj = evolve(&rho, &DriftSpec::ou(1, 1.0), &SolverConfig::auto(g, 1.0)).unwrap();
    let moved: f64 = traj
        .final_measure()
        .unwrap()
        .weights()
        .iter()
        .zip(rho.weights())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(moved <= g.dx() * g.dx(), "L1 change {moved:e}");
}

fn heat_error(n: usize) -> f64 {
    let g = grid1(6.0, n);
    let traj = evolve(
        &gaussian(&g, 0.0, 0.25),
        &DriftSpec::zero(1),
        &SolverConfig::auto(g, 0.5),
    )
    .unwrap();
    let exact = gaussian(&g, 0.0, 1.25);
    wasserstein_p(&traj.final_measure().unwrap(), &exact, 2.0).unwrap()
}

#[test]
fn heat_benchmark_converges_at_first_order() {
    let errs: Vec<f64> = [40, 80, 160].iter().map(|&n| heat_error(n)).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 2.0 * 0.95, "errors {errs:?}");
    }
}

#[test]
fn conservation_and_positivity_on_presets() {
    let g2 = Grid::new(2, 3.0, 32).unwrap();
    let g1 = grid1(3.0, 64);
    let cases: Vec<(Grid, DriftSpec)> = vec![
        (g1, DriftSpec::sign()),
        (g1, DriftSpec::preset("linear", 1, 0.0).unwrap()),
        (g1, DriftSpec::grad_power(1, 4.0, 1.0, 0.0).unwrap()),
        (g2, DriftSpec::rotation(1.0)),
        (g2, DriftSpec::preset("linear", 2, 0.0).unwrap()),
    ];
    for (g, b) in cases {
        let rho0 = from_density(gaussian_density(vec![0.4; g.dim()], 0.2), &g).unwrap();
        let traj = evolve(&rho0, &b, &SolverConfig::auto(g, 0.3)).unwrap();
        let d = traj.diagnostics();
        assert!(
            d.max_mass_drift <= 1e-12,
            "mass drift {:e}",
            d.max_mass_drift
        );
        assert!(d.min_weight >= 0.0);
        for f in traj.frames() {
            assert!((f.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12 * (1 + d.steps) as f64);
        }
    }
}

#[test]
fn cfl_violation_reports_admissible_step() {
    let g = grid1(2.0, 64);
    let err = evolve(
        &gaussian(&g, 0.0, 0.2),
        &DriftSpec::zero(1),
        &SolverConfig::new(g, 0.1, 0.2),
    )
    .unwrap_err();
    match err {
        Error::CflViolated { dt, admissible } => assert!(admissible < dt),
        other => panic!("{other}"),
    }
}

#[test]
fn time_map_examples() {
    assert_eq!(TimeMap::new(0.0).s_of_t(0.7).unwrap(), 0.7);
    assert_eq!(TimeMap::new(-1.0).s_inf(), 0.5);
    let s = TimeMap::new(1.0).s_of_t(1.0).unwrap();
    assert!((s - (2f64.exp() - 1.0) / 2.0).abs() < 1e-14);
    assert!(TimeMap::new(-1.0).t_of_s(0.5).is_err());
    for lambda in [-1.0, -0.3, 0.0, 0.3, 1.0] {
        let map = TimeMap::new(lambda);
        for k in 0..=20 {
            let t = 0.01 * k as f64;
            assert!((map.t_of_s(map.s_of_t(t).unwrap()).unwrap() - t).abs() <= 1e-12);
        }
    }
}

#[test]
fn rescaled_evolution_with_zero_lambda_is_plain_evolution() {
    let g = grid1(4.0, 128);
    let b = DriftSpec::preset("linear", 1, 0.0).unwrap();
    let rho0 = gaussian(&g, 0.5, 0.1);
    let cfg = SolverConfig::auto(g, 0.3);
    let plain = evolve(&rho0, &b, &cfg).unwrap();
    let field = Rescaled::new(Arc::new(b.clone()), TimeMap::new(0.0));
    let resc = evolve_rescaled(&rho0, &field, TimeMap::new(0.0), &cfg).unwrap();
    assert_eq!(plain.frames().len(), resc.frames().len());
    for (a, c) in plain.frames().iter().zip(resc.frames()) {
        assert_eq!(a.weights, c.weights);
    }
    let id = rescale_trajectory(&plain, 0.0).unwrap();
    for (k, f) in id.frames().iter().enumerate() {
        assert_eq!(f.s, f.t);
        assert_eq!(f.measure, plain.measure(k).unwrap());
    }
}

#[test]
fn ou_in_the_monotone_frame_is_heat_flow() {
    let g = grid1(8.0, 320);
    let b = DriftSpec::ou(1, 1.0);
    let map = TimeMap::new(1.0);
    let t1 = 0.5;
    let s1 = map.s_of_t(t1).unwrap();
    let field = Rescaled::new(Arc::new(b.centered()), map);
    let mut via_ou = Vec::new();
    let mut via_heat = Vec::new();
    for m in [-0.5, 0.5] {
        let rho0 = gaussian(&g, m, 0.09);
        let ou = evolve(&rho0, &b, &SolverConfig::auto(g, t1)).unwrap();
        via_ou.push(rescale_trajectory(&ou, 1.0).unwrap().sigma_at(s1).unwrap());
        let heat = evolve_rescaled(&rho0, &field, map, &SolverConfig::auto(g, s1)).unwrap();
        via_heat.push(heat.final_measure().unwrap());
    }
    for (a, c) in via_ou.iter().zip(&via_heat) {
        assert!((a.mean()[0] - c.mean()[0]).abs() < 0.01 * a.mean()[0].abs());
        assert!((a.covariance()[0] / c.covariance()[0] - 1.0).abs() < 0.01);
    }
    let w_ou = wasserstein_p(&via_ou[0], &via_ou[1], 2.0).unwrap();
    let w_heat = wasserstein_p(&via_heat[0], &via_heat[1], 2.0).unwrap();
    assert!((w_ou / w_heat - 1.0).abs() < 0.02, "{w_ou} vs {w_heat}");
    let rho0 = gaussian(&g, 0.0, 0.09);
    let beyond = SolverConfig::auto(g, 0.6);
    assert!(evolve_rescaled(&rho0, &field, TimeMap::new(-1.0), &beyond).is_err());
}

#[test]
fn rescaled_second_moments_and_integrability() {
    let g = grid1(6.0, 192);
    let b = DriftSpec::linear(1, vec![2.0], vec![0.0], 1.0).unwrap();
    let traj = evolve(&gaussian(&g, 0.7, 0.2), &b, &SolverConfig::auto(g, 0.5)).unwrap();
    let resc = rescale_trajectory(&traj, 1.0).unwrap();
    for (k, f) in resc.frames().iter().enumerate() {
        let m2 = traj.measure(k).unwrap().second_moment();
        assert!((f.measure.second_moment() - (2.0 * f.t).exp() * m2).abs() <= 1e-10 * (1.0 + m2));
    }
    let (lhs, rhs) = integrability_sums(&resc, &b);
    assert!(
        lhs > 0.0 && (lhs / rhs - 1.0).abs() < 1e-3,
        "{lhs} vs {rhs}"
    );
}

#[test]
fn contraction_statement_is_frame_independent() {
    let g = grid1(4.0, 96);
    let mu1 = gaussian(&g, -0.4, 0.1);
    let mu2 = gaussian(&g, 0.6, 0.3);
    for (lambda, t) in [(1.0, 0.7), (-1.0, 0.2), (0.5, 1.5)] {
        let map = TimeMap::new(lambda);
        for h in [
            CostFn::power(2.0).unwrap(),
            CostFn::concave_cap(1.0).unwrap(),
        ] {
            let direct = transport_cost(&mu1, &mu2, &rescale_cost(&h, lambda * t))
                .unwrap()
                .cost;
            let f = map.space_factor(t);
            let pushed = transport_cost(
                &mu1.pushforward_scale(f).unwrap(),
                &mu2.pushforward_scale(f).unwrap(),
                &h,
            )
            .unwrap()
            .cost;
            assert!((direct - pushed).abs() <= 1e-9 * (1.0 + direct));
        }
    }
}

#[test]
fn pushed_contracting_dirac_is_fixed() {
    let map = TimeMap::new(1.0);
    for t in [0.0, 0.3, 1.0, 2.5] {
        let rho = DiscreteMeasure::dirac(&[1.7 * (-t as f64).exp()]);
        let sigma = rho.pushforward_scale(map.space_factor(t)).unwrap();
        assert!((sigma.point(0)[0] - 1.7).abs() < 1e-12);
    }
}

#[test]
fn zero_drift_field_flags() {
    assert!(DriftSpec::zero(2).is_zero());
    assert!(DriftSpec::ou(1, 3.0).centered().is_zero());
}
