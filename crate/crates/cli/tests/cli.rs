use std::path::Path;
use std::process::{Command, Output};

use mf3net::io::{MetricTable, Snapshot};

fn run(task: &str, config: &str, dir: &Path, env: &[(&str, &str)]) -> Output {
    let cfg = dir.join(format!("{task}.cfg"));
    std::fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mf3net"));
    cmd.arg(task).arg("--config").arg(&cfg).arg("--out").arg(dir.join("out"));
    cmd.env_remove("MF3NET_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL_SWEEP: &str = "n_levels = 8,16,32,64\nseeds = 1..3\nrecord_intervals = 5\nT = 0.2\n";

#[test]
fn unknown_keys_are_validation_failures() {
    let d = tempfile::tempdir().unwrap();
    let o = run("train", "n = 10\nwidth = 3\n", d.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn irregular_models_are_rejected_before_compute() {
    let d = tempfile::tempdir().unwrap();
    let o = run("mf", "activation1 = identity\n", d.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(!d.path().join("out").exists());
}

#[test]
fn missing_config_is_a_validation_failure() {
    let o = Command::new(env!("CARGO_BIN_EXE_mf3net"))
        .args(["train", "--config", "/nonexistent/mf3net.cfg"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn failed_slope_check_exits_with_3_and_keeps_the_csv() {
    let d = tempfile::tempdir().unwrap();
    let o = run("sweep_n", &format!("{SMALL_SWEEP}slope_min = 5\nslope_max = 6\n"), d.path(), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let t = MetricTable::from_csv(&std::fs::read_to_string(d.path().join("out/sweep_n.csv")).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 4 * 3 + 4);
}

#[test]
fn environment_overrides_the_worker_flag() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.cfg");
    std::fs::write(&cfg, "check = false\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mf3net"))
        .args(["crossval", "--workers", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(d.path())
        .env("MF3NET_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("workers"));
}

#[test]
fn coupling_output_is_reproducible_across_worker_counts() {
    let cfg = "n = 12\nseeds = 1..3\nT = 0.1\nrecord_intervals = 4\nreference_nodes1 = 6\nreference_nodes3 = 8\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("couple", cfg, a.path(), &[("MF3NET_WORKERS", "1")])), 0);
    assert_eq!(code(&run("couple", cfg, b.path(), &[("MF3NET_WORKERS", "3")])), 0);
    let ca = std::fs::read(a.path().join("out/coupling.csv")).unwrap();
    let cb = std::fs::read(b.path().join("out/coupling.csv")).unwrap();
    assert_eq!(ca, cb);
    let t = MetricTable::from_csv(&String::from_utf8(ca).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 3 * 5);
}

#[test]
fn train_and_mf_snapshots_load_back() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("train", "n1 = 5\nn2 = 7\nT = 0.05\nrecord_intervals = 5\n", d.path(), &[])), 0);
    let s = Snapshot::load(&d.path().join("out/snapshot_train_seed1.txt")).unwrap();
    assert_eq!((s.weights.n1(), s.weights.n2(), s.weights.dim()), (5, 7, 2));
    assert_eq!(s.step_k, 50);
    assert_eq!(code(&run("mf", "m1 = 6\nm2 = 4\nT = 0.1\nh = 0.01\nrecord_intervals = 2\n", d.path(), &[])), 0);
    let s = Snapshot::load(&d.path().join("out/snapshot_mf_seed1.txt")).unwrap();
    assert_eq!((s.weights.n1(), s.weights.n2(), s.step_k), (6, 4, 10));
    assert!((s.t - 0.1).abs() < 1e-12);
    let t = MetricTable::from_csv(&std::fs::read_to_string(d.path().join("out/mf_seed1.csv")).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.get_meta("bound_w2").is_some());
}

#[test]
fn plot_writes_columns_and_a_script() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("sweep_n", &format!("{SMALL_SWEEP}check = false\n"), d.path(), &[])), 0);
    let input = d.path().join("out/sweep_n.csv");
    let o = run("plot", &format!("input = {}\n", input.display()), d.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dat = std::fs::read_to_string(d.path().join("out/sweep_n.dat")).unwrap();
    let rows: Vec<&str> = dat.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("8 "));
    assert!(d.path().join("out/sweep_n.gp").exists());
}

#[test]
fn plot_without_input_is_a_validation_failure() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("plot", "", d.path(), &[])), 2);
}
