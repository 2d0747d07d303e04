//! Backward dual equation: exact solutions, maximum principle, constraint
//! pairs, the Σ pairing and the drift-approximation error table.

use std::sync::Arc;

use fpcontract::backward::{
    check_constraint_pair, discrete_gradient_sup, knm_error, pairing_sigma, solve_backward,
};
use fpcontract::drift::{ladder, ApproxParams, DriftField};
use fpcontract::fp_forward::{evolve, Flux};
use fpcontract::measures::{from_density, gaussian_density};
use fpcontract::ot::transport_cost;
use fpcontract::{CostFn, DiscreteMeasure, DriftSpec, Error, Grid, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn constants_stay_constant() {
    for (grid, b) in [
        (Grid::new(1, 3.0, 60).unwrap(), DriftSpec::ou(1, 1.0)),
        (Grid::new(2, 2.0, 24).unwrap(), DriftSpec::rotation(1.0)),
        (Grid::new(1, 3.0, 60).unwrap(), DriftSpec::sign()),
    ] {
        let phi = vec![0.75; grid.len()];
        let sol = solve_backward(&phi, &b, &SolverConfig::auto(grid, 0.5)).unwrap();
        for f in sol.frames() {
            assert!(f.phi.iter().all(|v| (v - 0.75).abs() < 1e-14));
        }
    }
}

#[test]
fn heat_smoothing_matches_gaussian_convolution() {
    let grid = Grid::new(1, 4.0, 160).unwrap();
    let v0 = 0.1;
    let bump: Vec<f64> = grid
        .points()
        .iter()
        .map(|y| (-y * y / (2.0 * v0)).exp())
        .collect();
    let tau = 0.25;
    let cfg = SolverConfig::new(grid, 5e-4, tau).with_stride(50);
    let sol = solve_backward(&bump, &DriftSpec::zero(1), &cfg).unwrap();
    let sups: Vec<f64> = sol
        .frames()
        .iter()
        .map(|f| f.phi.iter().copied().fold(0.0, f64::max))
        .collect();
    for w in sups.windows(2) {
        assert!(
            w[0] < w[1],
            "sup must increase toward the final time: {sups:?}"
        );
    }
    let v = v0 + 2.0 * tau;
    let amp = (v0 / v).sqrt();
    let phi0 = sol.initial();
    let worst = grid
        .points()
        .iter()
        .zip(phi0)
        .map(|(y, p)| (p - amp * (-y * y / (2.0 * v)).exp()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 2e-3 * amp, "worst {worst:e}");
}

#[test]
fn ou_adjoint_on_the_interior_third() {
    let grid = Grid::new(1, 3.0, 150).unwrap();
    let b = DriftSpec::linear(1, vec![1.0], vec![0.0], 0.0).unwrap();
    let phi: Vec<f64> = grid.points().iter().map(|y| y.clamp(-3.0, 3.0)).collect();
    for flux in [Flux::ExponentialFitting, Flux::Upwind] {
        let sol = solve_backward(&phi, &b, &SolverConfig::auto(grid, 1.0).with_flux(flux)).unwrap();
        for f in sol.frames() {
            let decay = (-(1.0 - f.s)).exp();
            for (y, p) in grid.points().iter().zip(&f.phi) {
                if y.abs() <= 1.0 {
                    assert!(
                        (p - y * decay).abs() <= 3.0 * grid.dx() * y.abs().max(0.1),
                        "s={} y={y}",
                        f.s
                    );
                }
            }
        }
    }
}

#[test]
fn cfl_violation_is_reported() {
    let grid = Grid::new(1, 2.0, 80).unwrap();
    let phi = vec![0.0; grid.len()];
    let err = solve_backward(
        &phi,
        &DriftSpec::ou(1, 1.0),
        &SolverConfig::new(grid, 0.1, 1.0),
    )
    .unwrap_err();
    assert!(matches!(err, Error::CflViolated { .. }));
}

fn smooth_datum(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = grid.dim();
    let coef: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    grid.points()
        .chunks(d)
        .map(|p| {
            let x = p[0];
            let y = if d == 2 { p[1] } else { 0.0 };
            coef[0] * (1.3 * x).sin()
                + coef[1] * (0.7 * y).cos()
                + coef[2] * (x * y).tanh()
                + coef[3] * (-x * x).exp()
                + coef[4] * (x + y).atan()
                + coef[5]
        })
        .collect()
}

#[test]
fn maximum_principle_and_gradient_bound_on_monotone_presets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g1 = Grid::new(1, 3.0, 120).unwrap();
    let g2 = Grid::new(2, 2.5, 40).unwrap();
    let spd = DriftSpec::linear(2, vec![2.0, 0.5, 0.5, 1.0], vec![0.0, 0.0], 0.0).unwrap();
    let smoothed_sign: Arc<dyn DriftField> = Arc::new(ladder(
        &DriftSpec::sign(),
        ApproxParams::new(8, 16).unwrap(),
    ));
    let cases: Vec<(Grid, Arc<dyn DriftField>)> = vec![
        (g1, Arc::new(DriftSpec::zero(1))),
        (g1, Arc::new(DriftSpec::ou(1, 1.0))),
        (g1, smoothed_sign),
        (g2, Arc::new(spd)),
        (g2, Arc::new(DriftSpec::rotation(1.0))),
    ];
    for (grid, field) in cases {
        for _ in 0..3 {
            let phi = smooth_datum(&grid, &mut rng);
            let sol = solve_backward(
                &phi,
                field.as_ref(),
                &SolverConfig::auto(grid, 0.5).with_stride(5),
            )
            .unwrap();
            let r = sol.bounds();
            assert!(r.sup_ok, "{r:?}");
            assert!(r.gradient_ok, "{r:?}");
            let (lo, hi) = (r.final_min, r.final_max);
            for f in sol.frames() {
                assert!(f.phi.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
                let g = discrete_gradient_sup(&grid, &f.phi);
                assert!(g <= r.final_gradient * (1.0 + 5.0 * grid.dx()) + 1e-12);
            }
        }
    }
}

#[test]
fn trivial_constraint_pairs() {
    let grid = Grid::new(1, 2.0, 64).unwrap();
    let zero = vec![0.0; grid.len()];
    for h in [
        CostFn::power(1.0).unwrap(),
        CostFn::power(2.0).unwrap(),
        CostFn::concave_cap(1.0).unwrap(),
    ] {
        assert_eq!(check_constraint_pair(&zero, &zero, &h, &grid), 0.0);
    }
    let pts = grid.points();
    let up: Vec<f64> = pts.clone();
    let down: Vec<f64> = pts.iter().map(|y| -y).collect();
    assert_eq!(
        check_constraint_pair(&up, &down, &CostFn::power(1.0).unwrap(), &grid),
        0.0
    );
    let shifted: Vec<f64> = pts.iter().map(|y| -y + 0.3).collect();
    assert!(
        (check_constraint_pair(&up, &shifted, &CostFn::power(1.0).unwrap(), &grid) - 0.3).abs()
            < 1e-12
    );
}

#[test]
fn transport_duals_are_admissible_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for dim in [1usize, 2] {
        let grid = if dim == 1 {
            Grid::new(1, 2.0, 64).unwrap()
        } else {
            Grid::new(2, 2.0, 8).unwrap()
        };
        let pts = grid.points();
        let h = CostFn::power(2.0).unwrap();
        for _ in 0..5 {
            let w1: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
            let w2: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mu1 = DiscreteMeasure::normalized(dim, pts.clone(), w1).unwrap();
            let mu2 = DiscreteMeasure::normalized(dim, pts.clone(), w2).unwrap();
            let r = transport_cost(&mu1, &mu2, &h).unwrap();
            let v = check_constraint_pair(&r.phi, &r.psi, &h, &grid);
            assert!(v <= 1e-9, "violation {v:e}");
            assert!(v >= -1e-9, "some pair should be tight: {v:e}");
        }
    }
}

#[test]
fn pairing_of_constants() {
    let grid = Grid::new(2, 2.0, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let pts: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mu = DiscreteMeasure::normalized(2, pts, vec![1.0; 20]).unwrap();
    let nu = DiscreteMeasure::dirac(&[0.2, -0.4]);
    let zero = vec![0.0; grid.len()];
    let one = vec![1.0; grid.len()];
    assert_eq!(pairing_sigma(&zero, &zero, &grid, &mu, &nu).unwrap(), 0.0);
    assert!((pairing_sigma(&one, &one, &grid, &mu, &nu).unwrap() - 2.0).abs() < 1e-14);
    let far = DiscreteMeasure::dirac(&[5.0, 0.0]);
    assert!(pairing_sigma(&one, &one, &grid, &mu, &far).is_err());
}

#[test]
fn heat_pairing_is_conserved() {
    let grid = Grid::new(1, 4.0, 160).unwrap();
    assert!((grid.dx() - 0.05).abs() < 1e-15);
    let t_final = 0.5;
    let dt = 1e-3;
    let b = DriftSpec::zero(1);
    let mu1 = from_density(gaussian_density(vec![-0.5], 0.2), &grid).unwrap();
    let mu2 = from_density(gaussian_density(vec![0.7], 0.3), &grid).unwrap();
    let cfg = SolverConfig::new(grid, dt, t_final);
    let tr1 = evolve(&mu1, &b, &cfg).unwrap();
    let tr2 = evolve(&mu2, &b, &cfg).unwrap();
    let pts = grid.points();
    let phi1: Vec<f64> = pts.iter().map(|y| (1.3 * y).sin() + 0.5).collect();
    let phi2: Vec<f64> = pts.iter().map(|y| (-y * y).exp()).collect();
    let s_final = pairing_sigma(
        &phi1,
        &phi2,
        &grid,
        &tr1.final_measure().unwrap(),
        &tr2.final_measure().unwrap(),
    )
    .unwrap();
    let b1 = solve_backward(&phi1, &b, &cfg).unwrap();
    let b2 = solve_backward(&phi2, &b, &cfg).unwrap();
    let s_start = pairing_sigma(b1.initial(), b2.initial(), &grid, &mu1, &mu2).unwrap();
    assert!(
        (s_final - s_start).abs() <= 0.02 * s_start.abs(),
        "{s_final} vs {s_start}"
    );
}

#[test]
fn knm_vanishes_for_zero_drift() {
    let grid = Grid::new(1, 2.0, 40).unwrap();
    let mu = from_density(gaussian_density(vec![0.0], 0.3), &grid).unwrap();
    let b = DriftSpec::zero(1);
    let tr = evolve(&mu, &b, &SolverConfig::auto(grid, 0.2)).unwrap();
    let table = knm_error(&b, &[(1, 1), (4, 8), (16, 32)], &[&tr, &tr], 0.0, 0.2).unwrap();
    assert!(table.iter().all(|e| e.k == 0.0));
}

#[test]
fn knm_factorizes_for_linear_drift() {
    let grid = Grid::new(1, 2.0, 80).unwrap();
    let slope = 1.5;
    let b = DriftSpec::linear(1, vec![slope], vec![0.0], 0.0).unwrap();
    let mu1 = from_density(gaussian_density(vec![-0.4], 0.1), &grid).unwrap();
    let mu2 = from_density(gaussian_density(vec![0.6], 0.2), &grid).unwrap();
    let cfg = SolverConfig::auto(grid, 0.3).with_stride(4);
    let tr1 = evolve(&mu1, &b, &cfg).unwrap();
    let tr2 = evolve(&mu2, &b, &cfg).unwrap();
    let (t0, t1) = (0.05, 0.3);
    let pts = grid.points();
    for (n, m) in [(8, 4), (16, 16), (64, 32)] {
        let anm = ladder(&b, ApproxParams::new(n, m).unwrap());
        let mut c_samples = Vec::new();
        for &y in pts.iter().filter(|y| y.abs() > 0.1) {
            let mut v = [0.0];
            anm.eval(&[y], 0.0, &mut v);
            c_samples.push(v[0] / (slope * y));
        }
        let c = c_samples[0];
        assert!(
            c_samples.iter().all(|v| (v - c).abs() < 1e-9 * c),
            "A_nm is not a multiple of A for n={n}"
        );
        // ∫∫|A| dρ dt by the trapezoid rule on the stored frames
        let mut integral = 0.0;
        for tr in [&tr1, &tr2] {
            let mut times = vec![t0];
            times.extend(
                tr.frames()
                    .iter()
                    .map(|f| f.t)
                    .filter(|t| *t > t0 && *t < t1),
            );
            times.push(t1);
            let vals: Vec<f64> = times
                .iter()
                .map(|&t| {
                    let w = tr.weights_at(t).unwrap();
                    w.iter()
                        .zip(&pts)
                        .map(|(w, y)| w * (slope * y).abs())
                        .sum::<f64>()
                })
                .collect();
            for k in 1..times.len() {
                integral += 0.5 * (times[k] - times[k - 1]) * (vals[k] + vals[k - 1]);
            }
        }
        let table = knm_error(&b, &[(n, m)], &[&tr1, &tr2], t0, t1).unwrap();
        let want = (1.0 - c).abs() * integral;
        assert!(
            (table[0].k - want).abs() <= 1e-9 * want,
            "{} vs {want}",
            table[0].k
        );
    }
}
