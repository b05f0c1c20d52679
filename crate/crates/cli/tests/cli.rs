use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hyperbolic"));
    for k in ["CONFIG", "OUT", "SEED", "THREADS", "TOL_SCALE"] {
        c.env_remove(format!("HYPERBOLIC_{k}"));
    }
    c
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn report(out: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn verify_on_bundled_kepler_config_passes_every_criterion() {
    let out = scratch("verify");
    let o = run(&["verify"], &bundled("kepler.json"), &out);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out, "verify.json");
    let crit = r["result"]["criteria"].as_array().unwrap();
    let ids: Vec<u64> = crit.iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, (1..=10).collect::<Vec<u64>>());
    assert!(crit.iter().all(|c| c["pass"] == Value::Bool(true)));
    assert_eq!(stdout.lines().filter(|l| l.contains(" PASS: ")).count(), 10);
    assert_eq!(r["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn missing_masses_is_a_config_error() {
    let dir = scratch("missing");
    let cfg = write_config(&dir, r#"{ "dimension": 2, "limit_shape": [1, 0, -1, 0] }"#);
    let o = run(&["shoot"], &cfg, &dir.join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("masses"), "{err}");
    assert!(!dir.join("out").join("shoot.json").exists());
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = scratch("unknown");
    let cfg = write_config(&dir, r#"{ "masses": [1, 1], "dimension": 2, "mass": [1] }"#);
    assert_eq!(run(&["cone"], &cfg, &dir.join("out")).status.code(), Some(2));
}

#[test]
fn collision_in_limit_shape_cites_the_pair() {
    let dir = scratch("collision");
    let cfg = write_config(
        &dir,
        r#"{ "masses": [1, 2, 0.5], "dimension": 2,
             "limit_shape": [1, 0, -1, 0.5, -1, 0.5],
             "configurations": [[3, 0, -3, 1.5, -2.9, 1.5]] }"#,
    );
    let o = run(&["shoot"], &cfg, &dir.join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bodies 1 and 2"), "{err}");
}

#[test]
fn energy_inconsistent_with_limit_shape_is_rejected() {
    let dir = scratch("energy");
    let cfg = write_config(&dir, r#"{ "masses": [1, 1], "dimension": 2, "limit_shape": [1, 0, -1, 0], "energy": 3.0 }"#);
    let o = run(&["shoot"], &cfg, &dir.join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bound_state_is_a_numerical_failure() {
    let dir = scratch("bound");
    let cfg = write_config(
        &dir,
        r#"{ "masses": [1, 1], "dimension": 2,
             "configurations": [[0, 0, 1, 0]], "velocities": [[0, -0.1, 0, 0.1]] }"#,
    );
    let out = dir.join("out");
    let o = run(&["limit-shape"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out, "limit-shape.json");
    assert_eq!(r["ok"], Value::Bool(false));
    assert!(r["result"]["error"].as_str().unwrap().contains("hyperbolic"));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (a, b) = (scratch("det_a"), scratch("det_b"));
    for out in [&a, &b] {
        let o = run(&["shoot", "--threads", "1"], &bundled("kepler.json"), out);
        assert_eq!(o.status.code(), Some(0));
    }
    let (ja, jb) = (std::fs::read(a.join("shoot.json")).unwrap(), std::fs::read(b.join("shoot.json")).unwrap());
    assert_eq!(ja, jb);
    // fixed 17 significant digits
    let text = String::from_utf8(ja).unwrap();
    assert!(text.contains("\"tol_scale\":1.0000000000000000e0"));
    assert!(a.join("shoot_0.csv").exists());
}

#[test]
fn environment_overrides_flags() {
    let out = scratch("env");
    let o = bin()
        .args(["action"])
        .env("HYPERBOLIC_CONFIG", bundled("kepler.json"))
        .env("HYPERBOLIC_OUT", &out)
        .env("HYPERBOLIC_TOL_SCALE", "10")
        .env("HYPERBOLIC_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out, "action.json");
    assert_eq!(r["tol_scale"].as_f64(), Some(10.0));
    assert_eq!(r["seed"].as_u64(), Some(99));
    let pairs = r["result"]["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert!(pairs.iter().all(|p| p["free_time"]["within_brackets"] == Value::Bool(true)));
}

#[test]
fn chazy_and_busemann_on_three_bodies() {
    let out = scratch("three");
    for cmd in ["chazy", "busemann"] {
        let o = run(&[cmd], &bundled("three_body.json"), &out);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let c = report(&out, "chazy.json");
    assert!(c["result"]["log_coefficient_relative_error"].as_f64().unwrap() < 0.05);
    let b = report(&out, "busemann.json");
    for p in b["result"]["points"].as_array().unwrap() {
        assert!(p["eikonal_residual"].as_f64().unwrap().abs() < 1e-8);
    }
    let csv = std::fs::read_to_string(out.join("busemann_grid.csv")).unwrap();
    assert!(csv.starts_with("x0,x1,x2,x3,x4,x5,value,gap,g0"));
}
