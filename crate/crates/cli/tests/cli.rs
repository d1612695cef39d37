//! Command-level behaviour: configuration handling, artifacts and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use u1evolve::commands::{
    cmd_evolve, cmd_plot, cmd_solve_constraints, CONSTRAINTS_CSV, DIAGNOSTICS_CSV, INITIAL_SNAPSHOT, SUMMARY,
};
use u1evolve::config::{Family, RunConfig};
use u1evolve::error::CliError;
use u1evolve_core::elliptic::PoissonBackend;
use u1evolve_core::evolution::Scheme;

fn small(dir: &Path, family: Family) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.half_width = 8.0;
    cfg.grid.n = 33;
    cfg.data.family = family;
    cfg.data.radius = 1.5;
    cfg.scheme.t_end = 0.25;
    cfg.output.directory = dir.to_path_buf();
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("run.ini");
    fs::write(&path, cfg.serialize()).unwrap();
    path
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_u1evolve")).args(args).output().unwrap()
}

/// Every column of every data row, parsed.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let data = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, data)
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        (0.5..64.0f64, 16usize..300, -0.99..-0.01f64, 1e-14..1e-6f64, 1usize..5000, prop::bool::ANY),
        (0usize..3, 0.01..0.5f64, 0.0..10.0f64, 1e-14..1e-6f64, 1usize..100, 0usize..50),
        (0usize..4, 0.0..0.5f64, 0.01..1.0f64, prop::array::uniform4(prop::bool::ANY), 0u64..u64::MAX),
        ("[a-z0-9_]{1,12}", "[a-z0-9_]{0,8}"),
    )
        .prop_map(|(g, s, d, o)| {
            let mut c = RunConfig::default();
            c.grid.half_width = g.0;
            c.grid.n = 2 * g.1 + 1;
            c.elliptic.delta = g.2;
            c.elliptic.tol = g.3;
            c.elliptic.max_iter = g.4;
            c.elliptic.backend = if g.5 { PoissonBackend::SineTransform } else { PoissonBackend::ConjugateGradient };
            c.scheme.scheme = [Scheme::Free, Scheme::Constrained, Scheme::FrozenFlat][s.0];
            c.scheme.cfl = s.1;
            c.scheme.t_end = s.2;
            c.scheme.step_tol = s.3;
            c.scheme.step_max_iter = s.4;
            c.scheme.snapshot_every = s.5;
            c.data.family = [Family::Zero, Family::Radial, Family::Asymmetric, Family::Random][d.0];
            c.data.eps = d.1;
            c.data.radius = d.2 * g.0 / 4.0 * 0.99;
            [c.data.phi, c.data.omega, c.data.phi_dot, c.data.omega_dot] = d.3;
            c.data.seed = d.4;
            c.output.directory = PathBuf::from(o.0);
            c.output.prefix = o.1;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialized_config_reparses_to_itself(cfg in config_strategy()) {
        prop_assume!(cfg.validate().is_ok());
        let back = RunConfig::parse_str(&cfg.serialize()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn empty_config_is_the_default() {
    assert_eq!(RunConfig::parse_str("").unwrap(), RunConfig::default());
}

#[test]
fn zero_data_run_has_vanishing_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), Family::Zero);
    cmd_solve_constraints(&cfg).unwrap();
    let report = cmd_evolve(&cfg, None).unwrap();
    assert!((report.summary.t_final - 0.25).abs() < 1e-14);

    let (header, data) = rows(&cfg.artifact(CONSTRAINTS_CSV));
    for (name, v) in header.iter().zip(&data[0]) {
        if !name.ends_with("iterations") {
            assert!(v.abs() <= 1e-12, "{name} = {v:e}");
        }
    }
    let (header, data) = rows(&cfg.artifact(DIAGNOSTICS_CSV));
    assert_eq!(data.len(), report.summary.steps + 1);
    for row in &data {
        for (name, v) in header.iter().zip(row) {
            let skip = ["step", "t", "minN", "max_speed"].contains(&name.as_str());
            if !skip {
                assert!(v.abs() <= 1e-12, "{name} = {v:e}");
            }
        }
        let col = |n: &str| row[header.iter().position(|h| h == n).unwrap()];
        assert_eq!(col("minN"), 1.0);
        assert_eq!(col("max_speed"), 1.0);
    }
    let summary = fs::read_to_string(cfg.artifact(SUMMARY)).unwrap();
    assert!(summary.starts_with("status = ok\nexit_code = 0\n"));
}

#[test]
fn evolving_the_stored_initial_slice_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("direct"), Family::Random);
    cfg.data.seed = 3;
    cfg.data.eps = 0.02;
    cmd_solve_constraints(&cfg).unwrap();
    cmd_evolve(&cfg, None).unwrap();
    let mut replay = cfg.clone();
    replay.output.directory = dir.path().join("replay");
    cmd_evolve(&replay, Some(&cfg.artifact(INITIAL_SNAPSHOT))).unwrap();
    let a = fs::read(cfg.artifact(DIAGNOSTICS_CSV)).unwrap();
    let b = fs::read(replay.artifact(DIAGNOSTICS_CSV)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plot_writes_one_script_per_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Family::Radial);
    cfg.scheme.snapshot_every = 2;
    cmd_solve_constraints(&cfg).unwrap();
    cmd_evolve(&cfg, None).unwrap();
    let scripts = cmd_plot(dir.path()).unwrap();
    let snapshots = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "u1s"))
        .count();
    assert!(snapshots >= 2);
    assert_eq!(scripts.len(), 1 + snapshots);
    assert!(scripts.iter().all(|p| p.exists() && p.extension().is_some_and(|x| x == "gp")));
}

#[test]
fn plot_without_diagnostics_is_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_plot(dir.path()).unwrap_err();
    assert!(matches!(err, CliError::MissingInput(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let good = small(&dir.path().join("ok"), Family::Zero);
    let path = write_config(dir.path(), &good);
    let ok = binary(&["solve-constraints", "-c", path.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let even = dir.path().join("even.ini");
    fs::write(&even, "[grid]\nn = 128\n").unwrap();
    assert_eq!(binary(&["evolve", "-c", even.to_str().unwrap()]).status.code(), Some(2));

    let unknown = dir.path().join("unknown.ini");
    fs::write(&unknown, "[grid]\nwidth = 3\n").unwrap();
    assert_eq!(binary(&["evolve", "-c", unknown.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("absent.ini");
    assert_eq!(binary(&["evolve", "-c", missing.to_str().unwrap()]).status.code(), Some(1));
    let snapshot = dir.path().join("absent.u1s");
    assert_eq!(binary(&["diagnose", snapshot.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(binary(&["plot", dir.path().join("nowhere").to_str().unwrap()]).status.code(), Some(1));

    let threads = Command::new(env!("CARGO_BIN_EXE_u1evolve"))
        .args(["plot", dir.path().to_str().unwrap()])
        .env("U1EVOLVE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn diagnose_prints_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), Family::Radial);
    cmd_solve_constraints(&cfg).unwrap();
    let path = write_config(dir.path(), &cfg);
    let snap = cfg.artifact(INITIAL_SNAPSHOT);
    let out = binary(&["diagnose", snap.to_str().unwrap(), "-c", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("t,cl1_x,cl1_y,cl2_res,tau_sup"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
}
