use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = r#"
[[experiment]]
id = "smoke"
family = "quadratic"
space = "diagonal"
dim = 1
weights = [2.0]
x_star = [0.5]
algorithms = ["plain"]
checkpoints = [16]
radius = 1.0
seeds = [1]
"#;

fn bench(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precond-bench"))
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("PRECOND_BENCH_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn smoke_run_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    let res = bench(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let trace = fs::read_to_string(out.join("smoke/plain-seed1.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 17);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.starts_with("experiment,seed,K,suboptimality,slope,bound_margin,audit_failures,wall_ms\n"));
}

#[test]
fn clipped_radius_below_optimum_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE
        .replace("x_star = [0.5]", "x_star = [2.0]")
        .replace("[\"plain\"]", "[\"plain-clipped\"]");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let out = dir.path().join("out");
    let res = bench(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("radius"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMOKE.replace("radius = 1.0", "radius = 1.0\nmomentum = 0.9"));
    let res = bench(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("momentum"));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = bench(&dir.path().join("nope.toml"), &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn identical_invocations_produce_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE
        .replace("dim = 1", "dim = 6")
        .replace("weights = [2.0]", "weights = [3.0, 1.0]\nweights_fill = 0.2")
        .replace("x_star = [0.5]", "x_star_pattern = \"gaussian\"\nx_star_seed = 4\nx_star_scale = 0.5")
        .replace("[\"plain\"]", "[\"plain-clipped\", \"accel-clipped\"]")
        .replace("seeds = [1]", "seeds = [1, 2]\nnoise_sigma = 0.3");
    let cfg = write_config(dir.path(), "noisy.toml", &text);
    for format in ["csv", "json"] {
        let (a, b) = (dir.path().join(format!("a-{format}")), dir.path().join(format!("b-{format}")));
        assert_eq!(bench(&cfg, &a, &["--format", format]).status.code(), Some(0));
        assert_eq!(bench(&cfg, &b, &["--format", format]).status.code(), Some(0));
        for alg in ["plain-clipped", "accel-clipped"] {
            for seed in [1, 2] {
                let name = format!("smoke/{alg}-seed{seed}.{format}");
                let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
                assert_eq!(x, y, "{name}");
            }
        }
        let s1 = fs::read(a.join("smoke/plain-clipped-seed1.".to_string() + format)).unwrap();
        let s2 = fs::read(a.join("smoke/plain-clipped-seed2.".to_string() + format)).unwrap();
        assert_ne!(s1, s2, "noise should depend on the seed");
    }
}

#[test]
fn json_traces_parse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    assert_eq!(bench(&cfg, &out, &["--format", "json"]).status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("smoke/plain-seed1.json")).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 17);
    assert!(rows[0]["loewner_excess"].is_null());
    assert!(rows[1]["loewner_excess"].is_number());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["experiment"], "smoke/plain");
}

#[test]
fn seed_override_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    assert_eq!(bench(&cfg, &out, &["--seed-override", "5,6"]).status.code(), Some(0));
    assert!(out.join("smoke/plain-seed5.csv").exists());
    assert!(out.join("smoke/plain-seed6.csv").exists());
    assert!(!out.join("smoke/plain-seed1.csv").exists());
}

#[test]
fn env_var_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("from-env");
    let res = Command::new(env!("CARGO_BIN_EXE_precond-bench"))
        .arg(&cfg)
        .env("PRECOND_BENCH_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(out.join("report.csv").exists());
}

#[test]
fn list_experiments_does_not_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.toml", SMOKE);
    let out = dir.path().join("out");
    let res = bench(&cfg, &out, &["--list-experiments"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("smoke\t"));
    assert!(!out.exists());
}

// With L = I and x0 = 0 every gradient stays in the column span of x*, so the
// left-matrix moment keeps a null space whose rounding noise the tiny shift
// turns into large swings of H: a real audit failure.
const RANK_DEFICIENT: &str = r#"
[[experiment]]
id = "left"
family = "quadratic"
space = "left"
rows = 8
cols = 4
weights = 1.0
x_star_pattern = "gaussian"
x_star_seed = 3
x_star_scale = 0.5
algorithms = ["accelerated"]
checkpoints = [40]
radius = 2.0
delta = 1e-12
seeds = [1]
"#;

#[test]
fn audit_failure_exits_with_two_and_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "left.toml", RANK_DEFICIENT);
    let res = bench(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("loewner-monotonicity violated at iteration"), "{err}");

    let res = bench(&cfg, &dir.path().join("out2"), &["--no-audit"]);
    assert_eq!(res.status.code(), Some(0));

    let healthy = RANK_DEFICIENT.replace("delta = 1e-12", "delta = 0.1");
    let cfg = write_config(dir.path(), "left-ok.toml", &healthy);
    assert_eq!(bench(&cfg, &dir.path().join("out3"), &[]).status.code(), Some(0));
}
