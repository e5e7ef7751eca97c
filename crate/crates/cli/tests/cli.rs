use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const POISSON_EXP: &str = r#"{"map":{"C":[[-0.5]],"D":[[0.5]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#;
const EXAMPLE2: &str = r#"{"map":{"C":[[-1]],"D":[[1]]},"ph":{"alpha":[0.5,0.5],"T":[[-5,3],[2,-7]]},"d":2}"#;
const EX4: &str = r#"{"map":{"C":[[-5.142857142857143,5],[7,-8]],"D":[[0.14285714285714285,0],[0,1]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supermarket"))
        .current_dir(dir)
        .env_remove("SUPERMARKET_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn setup(models: &[(&str, &str)]) -> TempDir {
    let dir = TempDir::new().unwrap();
    for (name, text) in models {
        fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

/// Data rows after the provenance comment and header.
fn rows(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let prov = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let body = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (prov, header, body)
}

#[test]
fn fixed_point_writes_tails() {
    let dir = setup(&[("m.json", POISSON_EXP)]);
    let out = run(dir.path(), &["fixed-point", "--model", "m.json", "--d", "2", "--K", "40", "--out", "pi.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (prov, header, body) = rows(&dir.path().join("pi.csv"));
    assert!(prov.starts_with("# model_hash=") && prov.contains("seed=none") && prov.contains("version="));
    assert_eq!(header, ["level", "tail", "closed_form", "rel_dev", "zeta"]);
    for r in body.iter().skip(1).take(4) {
        let k: i32 = r[0].parse().unwrap();
        let tail: f64 = r[1].parse().unwrap();
        let want = 0.5f64.powi(2i32.pow(k as u32) - 1);
        assert!((tail - want).abs() <= 1e-10 * want, "level {k}: {tail} vs {want}");
    }
    assert!(dir.path().join("pi_components.csv").exists());
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = setup(&[("m.json", POISSON_EXP)]);
    let out = Command::new(env!("CARGO_BIN_EXE_supermarket"))
        .current_dir(dir.path())
        .env("SUPERMARKET_OUT_DIR", "results")
        .args(["mean-field", "--model", "m.json", "--t-end", "5", "--samples", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let (prov, header, body) = rows(&dir.path().join("results/trajectory.csv"));
    assert!(prov.contains("seed=1"));
    assert_eq!(&header[..3], ["t", "u0_0", "tail_1"]);
    assert_eq!(body.len(), 6);
}

#[test]
fn bad_models_exit_2_with_location() {
    let dir = setup(&[
        ("rows.json", r#"{"map":{"C":[[-1,0.5],[0.5,-1]],"D":[[0.5,0],[0,0.6]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#),
        ("neg.json", r#"{"map":{"C":[[-1,1.5],[0.5,-1]],"D":[[-0.5,0],[0,0.5]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#),
        ("schema.json", r#"{"map":{"C":[[-1]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#),
    ]);
    let out = run(dir.path(), &["fixed-point", "--model", "rows.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
    let out = run(dir.path(), &["fixed-point", "--model", "neg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("D"));
    assert_eq!(run(dir.path(), &["simulate", "--model", "schema.json"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["simulate", "--model", "missing.json"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["simulate", "--model", "rows.json", "--n", "0"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unstable_model_is_a_config_error() {
    let dir = setup(&[("u.json", r#"{"map":{"C":[[-2]],"D":[[2]]},"ph":{"alpha":[1],"T":[[-1]]},"d":2}"#)]);
    assert_eq!(run(dir.path(), &["fixed-point", "--model", "u.json"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_with_diagnostics() {
    let erlang = r#"{"map":{"C":[[-1]],"D":[[1]]},"ph":{"alpha":[1,0,0],"T":[[-5,5,0],[0,-5,5],[0,0,-5]]},"d":3}"#;
    let dir = setup(&[("e.json", erlang)]);
    let out = run(dir.path(), &["--out-dir", "o", "fixed-point", "--model", "e.json"]);
    assert_eq!(out.status.code(), Some(3));
    let diag = fs::read_to_string(dir.path().join("o/diagnostics.txt")).unwrap();
    assert!(diag.contains("fixed-point"));
}

#[test]
fn example_two_model_loads() {
    let dir = setup(&[("ex2.json", EXAMPLE2)]);
    let out = run(dir.path(), &["perf", "--model", "ex2.json", "--out", "p.csv"]);
    assert!(out.status.success());
    let (_, _, body) = rows(&dir.path().join("p.csv"));
    let rho: f64 = body[0][5].parse().unwrap();
    assert!((1.0 / rho - 3.4118).abs() < 1e-4);
}

#[test]
fn example_four_table_is_monotone() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["perf", "--example", "4", "--out", "ex4.csv"]);
    assert!(out.status.success());
    let (prov, header, body) = rows(&dir.path().join("ex4.csv"));
    assert!(prov.contains("model_hash=none"));
    let eq_col = header.iter().position(|h| h == "eq").unwrap();
    for d in ["d=1", "d=2", "d=5", "d=10"] {
        let eq: Vec<f64> = body.iter().filter(|r| r[1] == d).map(|r| r[eq_col].parse().unwrap()).collect();
        assert!(eq.len() > 5 && eq.windows(2).all(|w| w[1] > w[0]), "{d}");
    }
}

#[test]
fn simulate_and_couple_write_csvs() {
    let dir = setup(&[("m.json", EX4)]);
    let out = run(
        dir.path(),
        &["simulate", "--model", "m.json", "--n", "20", "--horizon", "20", "--replications", "2", "--sample-every", "5", "--seed", "9", "--out", "s.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (prov, header, _) = rows(&dir.path().join("s.csv"));
    assert!(prov.contains("seed=9"));
    assert_eq!(header, ["quantity", "index", "mean", "half_width_95"]);
    let (_, _, samples) = rows(&dir.path().join("s_samples.csv"));
    assert_eq!(samples.len(), 10);
    let out = run(
        dir.path(),
        &["couple", "--model", "m.json", "--n", "20", "--horizon", "30", "--warmup", "5", "--replications", "3", "--d-list", "1,2,4", "--out", "c.csv"],
    );
    assert!(out.status.success());
    let (_, _, body) = rows(&dir.path().join("c.csv"));
    assert_eq!(body.len(), 3);
    let (_, header, reps) = rows(&dir.path().join("c_replications.csv"));
    assert_eq!(header.len(), 5);
    assert_eq!(reps.len(), 3);
}

#[test]
fn seeded_simulation_is_reproducible() {
    let dir = setup(&[("m.json", EX4)]);
    let args = ["simulate", "--model", "m.json", "--n", "15", "--horizon", "15", "--replications", "2"];
    run(dir.path(), &[&args[..], &["--out", "a.csv"]].concat());
    run(dir.path(), &[&args[..], &["--out", "b.csv", "--sequential"]].concat());
    assert_eq!(
        fs::read_to_string(dir.path().join("a.csv")).unwrap(),
        fs::read_to_string(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn validate_model_passes_on_stable_model() {
    let dir = setup(&[("m.json", EX4)]);
    let out = run(dir.path(), &["validate", "--model", "m.json", "--out", "v.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS [residual]") && text.contains("INFO [tail]"));
    let (_, header, _) = rows(&dir.path().join("v.csv"));
    assert_eq!(header[2], "status");
}
