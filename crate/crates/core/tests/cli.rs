//! End-to-end runs of the `qsdlab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qsdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsdlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn grid_counts() {
    let o = qsdlab(&["grid", "--d", "3", "--N", "4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "states=15 interior=3");
}

#[test]
fn qsd_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qsdlab(&["qsd", "-c", &config("hawkdove.toml"), "--N", "20", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let q = json(&dir.path().join("qsd.json"));
    assert!(q["residual"].as_f64().unwrap() <= 1e-12);
    let rho = q["rho"].as_f64().unwrap();
    assert!(rho > 0.0 && rho < 1.0);
    let manifest = json(&dir.path().join("bundle.json"));
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["config"].as_str().unwrap().contains("N = 20"));
    let mu = fs::read_to_string(dir.path().join("mu.csv")).unwrap();
    assert_eq!(mu.lines().count(), 20);
    assert!(dir.path().join("qsd.svg").exists());
}

#[test]
fn echoed_config_reproduces_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let o = qsdlab(&["qsd", "-c", &config("grps.toml"), "--N", "12", "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = dir.path().join("echo.toml");
    fs::write(&echo, json(&first.join("bundle.json"))["config"].as_str().unwrap()).unwrap();
    let second = dir.path().join("b");
    let o = qsdlab(&["qsd", "-c", echo.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["bundle.json", "qsd.json", "mu.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_is_strictly_decreasing() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsdlab(&["sweep", "-c", &config("hawkdove.toml"), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N,rho,one_minus_rho,theta,expected_T0,qsd_mass_eps,residual,iterations,seconds"
    );
    let gaps: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(gaps.len(), 8);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let summary = json(&dir.path().join("sweep.json"));
    assert!(summary["fit"]["gamma_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn validate_echo_is_idempotent() {
    let o = qsdlab(&["validate", "-c", &config("twosink.toml")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tempfile::tempdir().unwrap();
    let echo = dir.path().join("echo.toml");
    fs::write(&echo, stdout(&o)).unwrap();
    let again = qsdlab(&["validate", "-c", echo.to_str().unwrap()]);
    assert_eq!(stdout(&again), stdout(&o));
}

fn validate_text(text: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, text).unwrap();
    qsdlab(&["validate", "-c", path.to_str().unwrap()])
}

#[test]
fn config_errors_exit_two() {
    let o = validate_text("[model]\nprotocol = \"pairwise_proportional\"\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.payoff"), "{}", stderr(&o));

    let o = validate_text("[model]\npayoff = [[1.0, 0.0], [0.0, 1.0]]\n\n[grid]\nN = 1\n");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("grid.N") && err.contains("line 5"), "{err}");

    let o = validate_text("[model]\npayoff = [[1.0, 0.0], [0.0, 1.0]]\ncolour = 3\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn pairwise_proportional_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pp.toml");
    fs::write(&cfg, "[model]\nprotocol = \"pairwise_proportional\"\npayoff = [[-1.0, 2.0], [0.0, 1.0]]\n").unwrap();
    let out = dir.path().join("out");
    let args = ["qsd", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = qsdlab(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    // the interior chain cannot reach the boundary, so the solve fails numerically
    let mut forced = args.to_vec();
    forced.push("--force");
    let o = qsdlab(&forced);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let diag = json(&out.join("diagnostic.json"));
    assert_eq!(diag["command"], "qsd");
}

#[test]
fn atlas_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("twosink.toml");
    for cmd in ["flow", "ldp", "apchains", "compare"] {
        let out = dir.path().join(cmd);
        let o = qsdlab(&[cmd, "-c", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(out.join("bundle.json").exists());
    }
    let cmp = json(&dir.path().join("compare/compare.json"));
    assert_eq!(cmp["match"]["agree"], true);
    let atlas = json(&dir.path().join("ldp/l_atlas.json"));
    assert_eq!(atlas["classes"].as_array().unwrap().len(), 3);
    let edges = fs::read_to_string(dir.path().join("ldp/cost_edges.csv")).unwrap();
    assert!(edges.starts_with("src_rank,dst_rank,cost,tau_opt\n"));
    let traj = fs::read_to_string(dir.path().join("flow/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x_1,x_2\n"), "{}", &traj[..20]);
}

#[test]
fn report_writes_plots() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsdlab(&["report", "-c", &config("twosink.toml"), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["decay.svg", "qsd.svg", "phase.svg", "l_classes.svg", "ap_classes.svg"] {
        let svg = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{f}");
    }
}

#[test]
fn missing_config_is_a_config_error() {
    let o = qsdlab(&["qsd"]);
    assert_eq!(o.status.code(), Some(2));
}
