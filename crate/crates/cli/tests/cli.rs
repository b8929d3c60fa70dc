use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[grid]
n = 32

[noise]
alpha0 = 0.05
split_radius = 2.0
phi = { kind = "constant", value = 0.01 }

[time]
h = 1e-3
t_end = 0.04
checkpoint_every = 0.02

[ensemble]
seed = 1

[initial]
smooth_norm = 0.5
rough_scale = 0.5
"#;

fn sns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sns")).args(args).output().expect("binary runs")
}

fn write_cfg(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p
}

fn run_in(dir: &Path, cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sns(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn odd_grid_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), &BASE.replace("n = 32", "n = 31"));
    let o = run_in(d.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.n = 31"), "{}", stderr(&o));
}

#[test]
fn missing_config_and_bad_flags() {
    assert_eq!(sns(&["simulate"]).status.code(), Some(2));
    assert_eq!(sns(&["simulate", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(sns(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_seeded() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), BASE);
    let read = |sub: &str, seed: &str| {
        let out = d.path().join(sub);
        let o = sns(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(out.join("report.csv")).unwrap()
    };
    let a = read("a", "1");
    let b = read("b", "1");
    let c = read("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# config_hash: "));
    assert_eq!(text.lines().count(), 2 + 41);
    let summary = fs::read_to_string(d.path().join("a/summary.json")).unwrap();
    assert!(summary.contains("config_hash"));
    assert!(d.path().join("a/checkpoints/ckpt_00000020.snsc").exists());
    assert!(d.path().join("a/checkpoints/ckpt_00000040.snsc").exists());
}

#[test]
fn resume_reaches_the_same_state() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), BASE);
    let o = run_in(d.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0));
    let full = fs::read_to_string(d.path().join("out/report.csv")).unwrap();
    let ck = d.path().join("out/checkpoints/ckpt_00000020.snsc");
    let out2 = d.path().join("resumed");
    let o = sns(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resumed = fs::read_to_string(out2.join("report.csv")).unwrap();
    // the ledger columns of the resumed initial row are blank by design
    assert_eq!(full.lines().last(), resumed.lines().last());
    assert_eq!(resumed.lines().count(), 2 + 21);
}

#[test]
fn corrupted_checkpoint_is_rejected_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), BASE);
    assert_eq!(run_in(d.path(), "simulate", &cfg, &[]).status.code(), Some(0));
    let ck = d.path().join("out/checkpoints/ckpt_00000020.snsc");
    let mut bytes = fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = d.path().join("bad.snsc");
    fs::write(&bad, &bytes).unwrap();
    let o = run_in(d.path(), "simulate", &cfg, &["--resume", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    fs::write(&bad, &bytes[..10]).unwrap();
    let o = run_in(d.path(), "simulate", &cfg, &["--resume", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blow_up_exit_code() {
    let d = tempfile::tempdir().unwrap();
    let body = BASE
        .replace("smooth_norm = 0.5", "smooth_norm = 1e80")
        .replace("h = 1e-3", "h = 0.5")
        .replace("t_end = 0.04", "t_end = 20.0");
    let cfg = write_cfg(d.path(), &body);
    let o = run_in(d.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let summary = fs::read_to_string(d.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("blow_up"));
}

#[test]
fn verify_runs_only_the_selected_suite() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), &format!("{BASE}\n[verify]\nn = 32\n"));
    let o = run_in(d.path(), "verify", &cfg, &["--suite", "heatflow"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("heatflow") && !stdout.contains("paraproducts"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/verdicts.json")).unwrap()).unwrap();
    assert_eq!(v["suites"].as_array().unwrap().len(), 1);
    assert_eq!(v["suites"][0]["suite"], "heatflow");
    assert_eq!(v["pass"], true);
    let csv = fs::read_to_string(d.path().join("out/suites.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap() == "lemma,j,p,N,t,estimate,slope,pass");
    let o = run_in(d.path(), "verify", &cfg, &["--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_failure_exits_one() {
    let d = tempfile::tempdir().unwrap();
    // two paths at this resolution cannot show monotone Cauchy differences
    let cfg = write_cfg(d.path(), &format!("{BASE}\n[verify]\nn = 384\npaths = 2\n"));
    let o = run_in(d.path(), "verify", &cfg, &["--suite", "wick"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/verdicts.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], false);
}

const INVARIANT: &str = r#"
[grid]
n = 8

[noise]
alpha0 = 1.0
split_radius = 0.0
phi = { kind = "constant", value = 1.0 }

[time]
h = 0.01
t_end = 20.0

[ensemble]
seed = 4

[invariant]
sharp_n = 3
burn_in = 2.0
batch_time = 2.0
nonlinear = false
"#;

#[test]
fn invariant_tables_and_resume() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), INVARIANT);
    let o = run_in(d.path(), "invariant", &cfg, &[]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    let table = fs::read_to_string(d.path().join("out/variance.csv")).unwrap();
    assert_eq!(table.lines().nth(1).unwrap(), "k1,k2,estimate,stderr,theory,z-score");
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/invariant.json")).unwrap()).unwrap();
    assert_eq!(j["batches"], 9);

    let longer = write_cfg(d.path(), &INVARIANT.replace("t_end = 20.0", "t_end = 40.0"));
    let stem = d.path().join("out/invariant_state");
    let out2 = d.path().join("more");
    let o = sns(&[
        "invariant",
        "--config",
        longer.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--resume",
        stem.to_str().unwrap(),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("invariant.json")).unwrap()).unwrap();
    assert_eq!(j["batches"], 19);
}

#[test]
fn identical_mixing_curve_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let body = BASE.replace("t_end = 0.04", "t_end = 0.02").replace("n = 32", "n = 16")
        + "\n[mixing]\nnorm_a = 0.3\nnorm_b = 0.3\nsample_times = 5\n";
    let cfg = write_cfg(d.path(), &body);
    let o = run_in(d.path(), "mixing", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/mixing.json")).unwrap()).unwrap();
    assert!(v["median"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
}
