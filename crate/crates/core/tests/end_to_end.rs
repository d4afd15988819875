use std::fs;

use domd::dynamics::{generate_path, LinearDynamics, NoiseModel};
use domd::harness::{self, load_config, parse_config_with_env, sweep, ExperimentConfig};
use domd::network::{build_grid_graph, metropolis_weights, second_singular_value};
use domd::Vector;

fn parse(text: &str) -> ExperimentConfig {
    parse_config_with_env(text, Vec::new()).unwrap()
}

#[test]
fn kl_synthetic_run_stays_on_simplex_and_respects_theorem1() {
    let c = parse(
        "scenario = \"synthetic_bounds\"\nhorizon = 150\n\
         [network]\nkind = \"complete\"\nn = 6\n\
         [geometry]\nkind = \"kl\"\ndim = 3\nfloor = 0.02\n\
         [schedule]\nkind = \"inv_sqrt\"\n\
         [synthetic]\nloss = \"linear\"\n",
    );
    let out = harness::run_experiment(&c).unwrap();
    for xs in &out.trace.iterates {
        for x in xs {
            assert!((x.sum() - 1.0).abs() < 1e-9);
            assert!(x.iter().all(|&v| v >= 0.02 - 1e-12));
        }
    }
    let bounds = out.bounds.as_ref().unwrap();
    assert!(out.regret.dynamic <= bounds.theorem1_total);
    assert!(out.disagreement.iter().zip(&bounds.lemma1_curve).all(|(d, b)| d <= b));
}

#[test]
fn edge_list_graph_matches_grid_builder() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = build_grid_graph(3, 3).unwrap();
    fs::write(tmp.path().join("g.txt"), grid.to_edge_list()).unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "scenario = \"synthetic_bounds\"\nhorizon = 40\n[network]\nkind = \"edge_list\"\npath = \"g.txt\"\n[geometry]\nbound = 1.0\n",
    )
    .unwrap();
    let from_file = harness::build_problem(&load_config(&cfg).unwrap(), 0).unwrap();
    let direct = second_singular_value(&metropolis_weights(&grid).unwrap()).unwrap().sigma2;
    assert!((from_file.sigma2 - direct).abs() < 1e-15);
    assert_eq!(from_file.weights.matrix(), metropolis_weights(&grid).unwrap().matrix());
}

#[test]
fn custom_path_drives_regret_against_imported_states() {
    let tmp = tempfile::tempdir().unwrap();
    let a = LinearDynamics::scaled_identity(2, 0.95).unwrap();
    let path = generate_path(&a, &NoiseModel::ConstantDrift(Vector::from_row_slice(&[0.02, -0.01])), &Vector::from_row_slice(&[0.5, 0.5]), 80).unwrap();
    fs::write(tmp.path().join("p.csv"), path.to_csv(Some("imported")).as_str()).unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "scenario = \"custom\"\nhorizon = 60\n[geometry]\nbound = 2.0\n[dynamics]\nkind = \"scaled_identity\"\nscale = 0.95\n[noise]\npath_file = \"p.csv\"\n",
    )
    .unwrap();
    let out = harness::run_experiment(&load_config(&cfg).unwrap()).unwrap();
    assert_eq!(out.problem.path.states, path.states[..=60].to_vec());
    let expected_ct: f64 = (0..60).map(|_| Vector::from_row_slice(&[0.02, -0.01]).norm()).sum();
    assert!((out.regret.c_t - expected_ct).abs() < 1e-9);
    assert!(out.regret.dynamic <= out.bounds.unwrap().theorem1_total);
}

#[test]
fn sweep_is_deterministic_and_matches_replicate_runs() {
    let c = parse("horizon = 80\nruns = 4\n");
    let res = sweep(&c, "noise.sigma_v2", &[0.5]).unwrap();
    let mut manual = vec![0.0; 80];
    for r in 0..4 {
        let p = harness::build_problem(&c, r).unwrap();
        let out = harness::execute(p, &c.hash()).unwrap();
        for (m, v) in manual.iter_mut().zip(&out.regret.normalized) {
            *m += v / 4.0;
        }
    }
    for (a, b) in res.mean[0].iter().zip(&manual) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn free_domain_tracking_has_no_bounds_and_nan_static_regret() {
    let c = parse("horizon = 40\n[geometry]\ndomain = \"free\"\n");
    let out = harness::run_experiment(&c).unwrap();
    assert!(out.bounds.is_none());
    assert!(out.regret.static_regret.is_nan());
    assert!(!out.files.iter().any(|(n, _)| n == "bounds.csv"));
}

#[test]
fn true_convention_halves_reported_oracle_scale() {
    let literal = harness::run_experiment(&parse("horizon = 30\n")).unwrap();
    let truth = harness::run_experiment(&parse("horizon = 30\n[gradient]\nconvention = \"true\"\n")).unwrap();
    assert_eq!(literal.oracle_scale, 0.5);
    assert_eq!(truth.oracle_scale, 1.0);
    assert_eq!(literal.problem.path.states, truth.problem.path.states);
}

#[test]
fn shipped_configs_load_and_run() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let mut c = load_config(&path).unwrap();
        c.horizon = c.horizon.min(100);
        let out = harness::run_experiment(&c).unwrap();
        assert!(out.regret.dynamic.is_finite(), "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 3);
}
