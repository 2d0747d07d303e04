//! End-to-end experiments against closed-form Gaussian oracles.

use std::path::Path;

use fpcontract::harness::{replay_dual_proof, run_contraction, run_invariant, ExperimentConfig};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text, Path::new(".")).unwrap()
}

fn pair(drift: &str, lambda: f64, extra: &str) -> ExperimentConfig {
    config(&format!(
        "drift = {drift}\nlambda = {lambda}\ncost = power:2\nmu1 = gaussian:-0.5:0.09\nmu2 = gaussian:0.5:0.09\n\
         grid.L = 4\ngrid.n = 160\nT = 1\ncheckpoints = 0.25, 0.5, 1\nout_dir = out\n{extra}"
    ))
}

#[test]
fn ou_wasserstein_ratio_follows_exponential_decay() {
    let report = run_contraction(&pair("ou", 1.0, "")).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    for row in &report.rows {
        let want = (-row.t).exp();
        let ratio = row.ratio.unwrap();
        assert!(
            (ratio - want).abs() <= 0.02 * want,
            "t={} ratio={ratio} want={want}",
            row.t
        );
        assert!(row.gaps_valid);
        assert!(row.gap_h.abs() <= 1e-9 * (1.0 + row.cost_h));
        assert!(row.gap_rescaled.abs() <= 1e-9 * (1.0 + row.cost_rescaled));
        assert!(row.frame_diff <= 1e-9, "frame diff {:e}", row.frame_diff);
    }
}

#[test]
fn heat_flow_preserves_translated_distance() {
    let report = run_contraction(&pair("zero", 0.0, "")).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    let costs: Vec<f64> = report.rows.iter().map(|r| r.cost_h).collect();
    for (row, w) in report
        .rows
        .iter()
        .zip(costs.windows(2).map(|w| w[1] - w[0]).chain([0.0]))
    {
        assert!((row.ratio.unwrap() - 1.0).abs() <= 0.02);
        assert!(w <= row.tol_h, "cost increased by {w:e}");
        assert_eq!(row.cost_h, row.cost_rescaled);
    }
}

#[test]
fn rotation_moves_means_rigidly() {
    let cfg = config(
        "drift = rotation:1\nlambda = 0\ncost = power:2\nmu1 = gaussian:-0.5,0:0.09\nmu2 = gaussian:0.5,0:0.09\n\
         grid.dim = 2\ngrid.L = 4\ngrid.n = 96\nT = 0.5\ncheckpoints = 0.25, 0.5\nn_max = 512\nout_dir = out\n",
    );
    let report = run_contraction(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    for row in &report.rows {
        assert!(
            (row.ratio.unwrap() - 1.0).abs() <= 0.03,
            "t={} ratio={:?}",
            row.t,
            row.ratio
        );
    }
}

#[test]
fn identical_data_from_independent_runs_coincide() {
    let mut cfg = pair("sign", 0.0, "uniqueness = true\n");
    cfg.t_final = 0.5;
    cfg.checkpoints = vec![0.5];
    let report = run_contraction(&cfg).unwrap();
    let u = report.uniqueness.unwrap();
    assert!(
        u.passed && u.w2_between_runs <= 2.0 * u.scheme_error,
        "{u:?}"
    );
}

fn invariant(mu1: &str) -> ExperimentConfig {
    config(&format!(
        "drift = ou\nlambda = 1\ncost = power:2\nmu1 = {mu1}\nmu2 = gaussian:0:1\ngrid.L = 8\ngrid.n = 320\n\
         T = 3\nt0 = 0.5\ncheckpoints = 0.5, 1, 1.5, 2, 2.5, 3\nout_dir = out\n"
    ))
}

#[test]
fn ou_relaxes_to_equilibrium_at_rate_lambda() {
    let report = run_invariant(&invariant("gaussian:1:1")).unwrap();
    assert!(report.passed());
    let rate = report.distance_rate.unwrap();
    assert!((rate - 1.0).abs() <= 0.05, "rate {rate}");
    assert!(report.cost_rate.unwrap() >= 2.0 * 0.95);
    assert_eq!(report.integrability, 0.0);
}

#[test]
fn equilibrium_stays_at_zero_cost() {
    let cfg = invariant("gaussian:0:1");
    let dx = 2.0 * cfg.half_extent / cfg.cells as f64;
    let report = run_invariant(&cfg).unwrap();
    for row in &report.rows {
        assert!(row.cost <= dx, "t={} cost={:e}", row.t, row.cost);
    }
    assert_eq!(report.integrability, 0.0);
}

fn replay(drift: &str, lambda: f64, mu2: &str, t: f64) -> ExperimentConfig {
    config(&format!(
        "drift = {drift}\nlambda = {lambda}\ncost = power:2\nmu1 = gaussian:-0.5:0.09\nmu2 = {mu2}\n\
         grid.L = 4\ngrid.n = 160\nT = {t}\nladder.n = 4, 16, 64\nladder.m = 8, 32\nout_dir = out\n"
    ))
}

#[test]
fn replay_chain_holds_for_heat_flow() {
    let r = replay_dual_proof(&replay("zero", 0.0, "gaussian:0.5:0.09", 0.25)).unwrap();
    assert!(r.passed(), "{:?}", r.stages);
    let bound = r.cost_s0 + r.lipschitz * r.k_used;
    assert!(r.sigma_s1 <= r.sigma_s0 + r.lipschitz * r.k_used + 1e-3 * r.cost_s0);
    assert!(r.sigma_s0 <= r.cost_s0 + 1e-3 * r.cost_s0);
    assert!(bound - r.sigma_s1 >= -1e-3 * r.cost_s0);
    assert!(r.knm.iter().all(|e| e.k == 0.0));
}

#[test]
fn replay_of_identical_measures_is_all_zero() {
    let r = replay_dual_proof(&replay("zero", 0.0, "gaussian:-0.5:0.09", 0.25)).unwrap();
    for v in [r.lp_cost_s1, r.cost_s0] {
        assert!(v.abs() <= 1e-12, "{v:e}");
    }
    for v in [r.sigma_s1, r.sigma_s0, r.tightened_value] {
        assert!(v.abs() <= 1e-9, "{v:e}");
    }
}

#[test]
fn replay_error_term_decreases_along_the_ladder() {
    let r = replay_dual_proof(&replay("ou", 1.0, "gaussian:0.5:0.09", 0.5)).unwrap();
    assert!(r.passed(), "{:?}", r.stages);
    for m in [8, 32] {
        let along: Vec<f64> = [4, 16, 64]
            .iter()
            .map(|&n| r.knm.iter().find(|e| e.n == n && e.m == m).unwrap().k * r.lipschitz)
            .collect();
        assert!(along.windows(2).all(|w| w[1] <= w[0]), "m={m}: {along:?}");
    }
}
