use std::path::Path;
use std::process::{Command, Output};

use dualex::formats;
use dualex::linalg::max_column_norm;
use serde_json::Value;

fn dualex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).expect("stdout is a JSON record")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["bin", "csv"] {
        let a = dir.path().join(format!("a.{format}"));
        let b = dir.path().join(format!("b.{format}"));
        for f in [&a, &b] {
            let o = dualex(&["gen", "--kind", "matgame-ball", "--seed", "5", "--n", "9", "--d", "4", "--format", format, "--out", p(f)]);
            assert!(o.status.success());
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let m = formats::read_matrix(&a, false).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (4, 9));
        assert!(max_column_norm(&m) <= 1.0);
    }
}

#[test]
fn generated_cvar_losses_stay_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("losses.csv");
    assert!(dualex(&["gen", "--kind", "cvar", "--seed", "3", "--n", "20", "--d", "5", "--out", p(&f)]).status.success());
    let l = formats::read_affine_csv(&f, false).unwrap();
    assert_eq!(l.a.len(), 20);
    let mut rng = dualex::exec::stream_rng(0, 0);
    for _ in 0..1000 {
        use rand::Rng;
        let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = dualex::linalg::project_ball(&g, &[0.0; 5], 1.0);
        for (a, b) in l.a.iter().zip(&l.b) {
            let v = dualex::linalg::dot(a, &x) + b;
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn matgame_dual_seed_7_passes() {
    let o = dualex(&["matgame", "--seed", "7", "--n", "32", "--d", "32", "--eps", "0.1"]);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert_eq!(r["task"], "matgame-dual");
    assert!(r["metric"].as_f64().unwrap() <= 0.1);
    assert_eq!(r["pass"], true);
}

#[test]
fn matgame_from_file_matches_generated_instance() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("g.bin");
    assert!(dualex(&["gen", "--kind", "matgame-simplex", "--seed", "4", "--n", "12", "--d", "6", "--format", "bin", "--out", p(&f)]).status.success());
    let direct = record(&dualex(&["matgame", "--seed", "4", "--n", "12", "--d", "6", "--no-ref"]));
    let file = record(&dualex(&["matgame", "--seed", "4", "--input", p(&f), "--no-ref"]));
    assert_eq!(direct["metric"], file["metric"]);
    assert_eq!(direct["metric_kind"], "duality_gap_certificate");
}

#[test]
fn primal_corollary_and_ball_rejection() {
    let o = dualex(&["matgame", "--primal", "--seed", "2", "--n", "10", "--d", "10", "--ref-tol", "1e-5"]);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert_eq!(r["task"], "matgame-primal");

    let o = dualex(&["matgame", "--primal", "--variant", "ball", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let r = record(&o);
    assert_eq!(r["error"]["kind"], "unsupported");
    assert_eq!(r["pass"], false);
}

#[test]
fn critpoint_quadratic_passes_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let args = ["critpoint", "--seed", "11", "--d", "20", "--cond", "100", "--gamma-frac", "0.01"];
    let mut with_trace = args.to_vec();
    with_trace.extend(["--trace", p(&trace)]);
    let o = dualex(&with_trace);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert!(r["metric"].as_f64().unwrap() <= r["gamma"].as_f64().unwrap());
    let rounds = r["details"]["rounds"].as_array().unwrap().len();
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(lines.lines().count(), rounds);
    let again = record(&dualex(&args));
    assert_eq!(r["metric"], again["metric"]);
    assert_eq!(r["queries"], again["queries"]);
}

#[test]
fn critpoint_logistic_from_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert!(dualex(&["gen", "--kind", "logistic", "--seed", "1", "--n", "50", "--d", "4", "--out", p(&data)]).status.success());
    let o = dualex(&["critpoint", "--family", "logistic", "--input", p(&data), "--seed", "1", "--gamma-frac", "0.05"]);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert_eq!(r["d"], 4);
}

#[test]
fn cvar_without_reference_reports_certificate() {
    let o = dualex(&["cvar", "--seed", "1", "--n", "6", "--d", "2", "--alpha", "0.5", "--eps", "0.3", "--no-ref"]);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert_eq!(r["metric_kind"], "primal_dual_gap_estimate");
    assert_eq!(r["reference"], false);
}

#[test]
fn suite_passes() {
    let o = dualex(&["suite", "--seed", "1"]);
    let r = record(&o);
    assert!(o.status.success(), "{r}");
    assert_eq!(r["metric"], 0.0);
    assert!(r["details"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn csv_header_written_once_and_json_appended() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let json = dir.path().join("runs.jsonl");
    for seed in ["1", "2"] {
        let o = dualex(&["critpoint", "--seed", seed, "--d", "5", "--csv", p(&csv), "--json", p(&json)]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "task,seed,n,d,alpha,eps,gamma,metric,bound,queries,millis,pass");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("critpoint,1,,5,"));
    let objs = std::fs::read_to_string(&json).unwrap();
    assert_eq!(objs.lines().count(), 2);
    for l in objs.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["task"], "critpoint");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\nseed = 9\nd = 6\ngamma_frac = 0.1\n").unwrap();
    let r = record(&dualex(&["critpoint", "--config", p(&cfg), "--d", "3"]));
    assert_eq!(r["seed"], 9);
    assert_eq!(r["d"], 3);
    assert_eq!(r["params"]["gamma_frac"], 0.1);
}

#[test]
fn missing_seed_is_a_structured_error() {
    let o = dualex(&["critpoint"]);
    assert_eq!(o.status.code(), Some(2));
    let r = record(&o);
    assert!(r["error"]["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn invalid_parameters_are_rejected() {
    let o = dualex(&["cvar", "--seed", "1", "--alpha", "0.01", "--no-ref"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(record(&o)["error"]["kind"], "invalid_input");
}
