use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_bernoulli-fb");

const SMALL: &str = r#"
deterministic = true
[params]
m = 1.0
h = 3.0
gamma = 0.3
lambda = 1.0
[grid]
nx = 32
ny = 32
y_max = 3.5
[solver]
levels = 2
[diagnostics.probe]
samples = 40
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FB_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr_report(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn solve_writes_schema_versioned_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let out = tmp.path().join("run");
    let res = cli(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    for name in [
        "manifest.json",
        "regime.json",
        "solution.json",
        "bernoulli.json",
        "contact.json",
        "probe.json",
        "classification.json",
        "blowup_0.json",
    ] {
        let v = json(&out.join(name));
        assert_eq!(v["schema_version"], 1, "{name}");
    }
    for name in ["fbcurve.csv", "weiss.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("# schema_version=1\n"), "{name}");
    }

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["deterministic"], true);
    assert!(manifest.get("timings").is_none());
    assert!(manifest.get("threads").is_none());
    assert!(manifest["config"].get("output_dir").is_none());
    assert!(manifest["solution"]["converged"].is_boolean());
    for a in manifest["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["name"].as_str().unwrap())).unwrap();
        let digest = periodic_bernoulli::io::sha256_hex(&bytes);
        assert_eq!(a["sha256"], digest.as_str());
    }

    let sidecar = json(&out.join("solution.json"));
    let payload = fs::read(out.join("solution.bin")).unwrap();
    assert_eq!(sidecar["sha256"], periodic_bernoulli::io::sha256_hex(&payload).as_str());
    let (nx, ny) = (sidecar["nx"].as_u64().unwrap() as usize, sidecar["ny"].as_u64().unwrap() as usize);
    assert_eq!(payload.len(), 8 * nx * (ny + 1));
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(cli(&["solve", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let manifest = a.join("manifest.json");
    let res = cli(&["solve", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn threads_flag_and_env_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(cli(&["solve", "--config", &cfg, "--threads", "1", "--out", a.to_str().unwrap()]).status.success());
    let res = Command::new(BIN)
        .args(["solve", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("FB_THREADS", "4")
        .output()
        .unwrap();
    assert!(res.status.success());
    for name in ["manifest.json", "fbcurve.csv", "weiss.csv", "probe.json", "solution.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn regimes_subcommand_writes_only_regime_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "r.toml", SMALL);
    let out = tmp.path().join("r");
    let res = cli(&["regimes", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let regime = json(&out.join("regime.json"));
    assert!((regime["h_sharp"].as_f64().unwrap() - 3.0 * 0.5f64.powf(2.0 / 3.0)).abs() < 1e-12);
    assert_eq!(regime["gamma_class"], "NonFlatGuaranteed");
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, vec!["manifest.json", "regime.json"]);
}

#[test]
fn config_errors_exit_2_with_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", &SMALL.replace("gamma = 0.3", "gamma = -0.3"));
    let res = cli(&["solve", "--config", &bad, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let report = stderr_report(&res);
    assert_eq!(report["kind"], "config");
    assert_eq!(report["field"], "params.gamma");

    let unknown = write(tmp.path(), "unknown.toml", &format!("{SMALL}\n[extra]\nx = 1\n"));
    let res = cli(&["solve", "--config", &unknown, "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    let missing = cli(&["solve", "--config", "/nonexistent/run.toml", "--out", tmp.path().join("z").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let no_out = write(tmp.path(), "noout.toml", SMALL);
    assert_eq!(cli(&["solve", "--config", &no_out]).status.code(), Some(2));
    assert_eq!(cli(&["solve", "--config", &no_out, "--threads", "0", "--out", "/tmp/never"]).status.code(), Some(2));
}

#[test]
fn non_convergence_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "short.toml", &SMALL.replace("levels = 2", "levels = 1\nmax_iters = 3"));
    let out = tmp.path().join("short");
    let res = cli(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(json(&out.join("manifest.json"))["solution"]["converged"], false);
}

#[test]
fn compare_and_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        assert!(cli(&["solve", "--config", &cfg, "--out", d.to_str().unwrap()]).status.success());
    }
    let res = cli(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(res.status.success());
    let report: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["energy_delta"], 0.0);
    assert!(report["weiss"].as_array().unwrap().iter().all(|w| w["delta"] == 0.0));

    let other_cfg = write(tmp.path(), "other.toml", &SMALL.replace("gamma = 0.3", "gamma = 0.4"));
    let c = tmp.path().join("c");
    assert!(cli(&["solve", "--config", &other_cfg, "--out", c.to_str().unwrap()]).status.success());
    assert_eq!(cli(&["compare", a.to_str().unwrap(), c.to_str().unwrap()]).status.code(), Some(2));
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(cli(&["compare", a.to_str().unwrap(), empty.to_str().unwrap()]).status.code(), Some(2));

    let before = fs::read(a.join("weiss.csv")).unwrap();
    fs::remove_file(a.join("probe.json")).unwrap();
    let res = cli(&["diagnose", a.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(a.join("probe.json").exists());
    assert_eq!(fs::read(a.join("weiss.csv")).unwrap(), before);
}
