use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cxlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxlnet"))
        .args(args)
        .current_dir(root())
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for e in std::fs::read_dir(root().join("configs")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            cxlnet::config::ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn run_then_verify_then_tamper() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let o = cxlnet(&["run", "configs/loss_trace.toml", "--seed", "3", "--csv-dir", dir]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oracle pass"));
    assert_eq!(code(&cxlnet(&["verify", dir])), 0);

    let img = d.path().join("image.txt");
    let text = std::fs::read_to_string(&img).unwrap();
    let (addr, data) = text.lines().next().unwrap().split_once(' ').unwrap();
    let swapped = if data.starts_with('0') { "1" } else { "0" };
    let first = format!("{addr} {data}");
    std::fs::write(&img, text.replacen(&first, &format!("{addr} {swapped}{}", &data[1..]), 1)).unwrap();
    assert_eq!(code(&cxlnet(&["verify", dir])), 2);
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(code(&cxlnet(&["run", "configs/missing.toml"])), 1);
    assert_eq!(code(&cxlnet(&["run", "configs/default.toml", "--set", "cn.nonsense=1"])), 1);
    assert_eq!(code(&cxlnet(&["run", "configs/default.toml", "--set", "workload.read_ratio=2.0"])), 1);
    assert_eq!(code(&cxlnet(&["sweep", "configs/default.toml", "--vary", "workload.outstanding"])), 1);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().to_str().unwrap();
    let o = cxlnet(&[
        "sweep",
        "configs/default.toml",
        "--vary",
        "workload.outstanding=1,4",
        "--vary",
        "workload.read_ratio=0.0,1.0",
        "--set-dummy-check",
    ]);
    assert_ne!(code(&o), 0, "unknown flags are rejected");
    let o = cxlnet(&[
        "sweep",
        "configs/default.toml",
        "--vary",
        "workload.outstanding=1,4",
        "--vary",
        "workload.read_ratio=0.0,1.0",
        "--csv-dir",
        dir,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(d.path().join("workload.outstanding=4_workload.read_ratio=1.0/latency.csv").exists());
}

#[test]
fn runs_are_reproducible_from_the_command_line() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = cxlnet(&["run", "configs/lossy.toml", "--set", "workload.request_count=2000", "--csv-dir", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for f in ["latency.csv", "summary.csv", "ops.log", "image.txt", "config.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
