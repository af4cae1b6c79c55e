use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn spinflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinflow"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn metadata(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap()
}

const QUICK_DYNAMICS: &str = "t_end = 0.1\nrecord_every = 10\n";

#[test]
fn dynamics_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", QUICK_DYNAMICS);
    for (out, workers) in [("a", "1"), ("b", "3")] {
        let o = spinflow(&["dynamics", "--config", &cfg, "--out", out, "--workers", workers], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = [
        "mh_snapshots.csv",
        "sde_snapshots.csv",
        "pde_snapshots.csv",
        "mh_scalars.csv",
        "errors.csv",
        "plot_dynamics.py",
    ];
    for name in names {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn metadata_lists_hashes_and_derived_quantities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", QUICK_DYNAMICS);
    let o = spinflow(&["dynamics", "--config", &cfg, "--out", "run", "--seed", "7"], tmp.path());
    assert!(o.status.success());
    let run = tmp.path().join("run");
    let meta = metadata(&run);
    assert_eq!(meta["seeds"]["seed"], 7);
    assert_eq!(meta["config"]["seed"], 7);
    let lattice = &meta["derived"]["lattice"];
    assert_eq!(lattice["sites"], 20);
    assert_eq!(lattice["coupling"], 10.0);
    let eps = lattice["eps"].as_f64().unwrap();
    assert!((eps - (10.0 * 1e-3 / 10f64.powf(1.5)).sqrt()).abs() < 1e-12);
    let hashes = meta["artifacts"].as_object().unwrap();
    assert_eq!(hashes.len(), 8);
    for (name, h) in hashes {
        let digest = Sha256::digest(fs::read(run.join(name)).unwrap());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(h.as_str().unwrap(), hex, "{name}");
    }
}

#[test]
fn noise_off_sde_matches_heat_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", &format!("{QUICK_DYNAMICS}beta = inf\n"));
    let o = spinflow(&["dynamics", "--config", &cfg, "--out", "run", "--model", "heisenberg"], tmp.path());
    assert!(o.status.success());
    let errors = fs::read_to_string(tmp.path().join("run/errors.csv")).unwrap();
    for line in errors.lines().skip(1) {
        let sde: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(sde <= 1e-12, "{line}");
    }
    assert_eq!(metadata(&tmp.path().join("run"))["derived"]["lattice"]["beta"], "inf");
}

#[test]
fn conv_dt_writes_points_and_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "t_end = 0.01\nref_refinement = 4\n");
    let o = spinflow(&["conv-dt", "--config", &cfg, "--out", "run", "--realizations", "3"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("run/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("h,err,stderr,n_realizations"));
    assert_eq!(lines.clone().count(), 4);
    assert!(lines.all(|l| l.ends_with(",3")));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/fit.json")).unwrap()).unwrap();
    assert!(fit["fit"]["slope"].as_f64().unwrap().is_finite());
    assert!((metadata(&tmp.path().join("run"))["derived"]["dt_ref"].as_f64().unwrap() - 1.25e-4 / 4.0).abs() < 1e-18);
    assert!(tmp.path().join("run/plot_convergence.py").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "u.toml", "nn = 3\n");
    let o = spinflow(&["dynamics", "--config", &unknown], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nn"));

    let sweep = write_config(tmp.path(), "s.toml", "n_sweep = [10]\n");
    let o = spinflow(&["conv-dx", "--config", &sweep], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_sweep"));

    let dyadic = write_config(tmp.path(), "y.toml", "dt_sweep = [1e-3, 3e-4, 1e-4, 5e-5]\n");
    assert_eq!(spinflow(&["conv-dt", "--config", &dyadic], tmp.path()).status.code(), Some(2));

    let missing = spinflow(&["validate", "--config", "does-not-exist.toml"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(spinflow(&["dynamics", "--model", "ising"], tmp.path()).status.code(), Some(2));
}

#[test]
fn unstable_step_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", "dt = 0.01\n");
    let o = spinflow(&["dynamics", "--config", &cfg, "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stability"));
}

const QUICK_VALIDATE: &str =
    "n_trials = 2000\nuniformity_steps = 20000\nenergy_realizations = 4\nenergy_t_end = 0.05\n";

#[test]
fn validate_writes_report_and_flags_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_config(tmp.path(), "v.toml", QUICK_VALIDATE);
    let o = spinflow(&["validate", "--config", &ok, "--out", "good", "--model", "heisenberg"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("good/validation.txt")).unwrap();
    assert!(text.contains("projection kinds agree"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("good/validation.json")).unwrap()).unwrap();
    let pass = report["pass"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if pass { 0 } else { 4 }));

    // Taylor residuals leave their asymptotic orders at unit step lengths
    let bad = write_config(tmp.path(), "b.toml", &format!("{QUICK_VALIDATE}taylor_eps = [1.5, 1.0, 0.5]\n"));
    let o = spinflow(&["validate", "--config", &bad, "--out", "bad"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(fs::read_to_string(tmp.path().join("bad/validation.txt")).unwrap().contains("FAIL"));
}
