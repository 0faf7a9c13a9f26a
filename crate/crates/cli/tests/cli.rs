use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dion-bench"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_log_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("quadratic_orth_dion.json");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert!(csv.starts_with("step,layer,loss,kyfan_grad_r,nu,delta,eps_proj,eps_proj_G,"));
    assert_eq!(csv.lines().count(), 501);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["algorithm"], "orth_dion");
    assert!(json["rng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn seed_and_fast_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("stream_stochastic_dion.json");
    let cfg = cfg.to_str().unwrap();
    let csv_for = |sub: &str, extra: &[&str]| {
        let out_dir = dir.path().join(sub);
        let mut args = vec!["run", "--config", cfg, "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(run(&args).status.code(), Some(0));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
        (std::fs::read_to_string(out_dir.join("steps.csv")).unwrap(), json)
    };
    let (a, _) = csv_for("a", &[]);
    let (b, _) = csv_for("b", &[]);
    let (c, json) = csv_for("c", &["--seed", "99"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(json["config"]["seed"], 99);

    let quad = config("quadratic_orth_dion.json");
    let out_dir = dir.path().join("fast");
    let out = run(&[
        "run",
        "--config",
        quad.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--fast-diagnostics",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "");
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("quadratic_orth_dion.json"))
        .unwrap()
        .replace("\"rank\": 4", "\"rank\": 0");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));

    let missing = run(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("quadratic_orth_dion.json"))
        .unwrap()
        .replace("{ \"kind\": \"inv_sqrt_t\", \"c\": 1.0 }", "{ \"kind\": \"constant\", \"c\": 1e300 }");
    let path = dir.path().join("boom.json");
    std::fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["run", "--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert!(json["summary"]["aborted"]["step"].is_u64());
}

#[test]
fn sweep_and_trace_print_tables() {
    let cfg = config("stream_stochastic_dion.json");
    let out = run(&["sweep-beta", "--config", cfg.to_str().unwrap(), "--betas", "1.0,0.5,0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let table: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 3);
    assert_eq!(table["rows"][0]["beta"], 0.1);

    let out = run(&["trace-nu", "--config", cfg.to_str().unwrap(), "--ranks", "1,4"]);
    assert_eq!(out.status.code(), Some(0));
    let trace: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(trace["orth_dion_flat"], true);

    let bad = run(&["sweep-beta", "--config", cfg.to_str().unwrap(), "--betas", "2.0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn commcost_and_check() {
    let out = run(&["commcost"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("layer,lowrank,540672,1081344"));
    assert!(text.contains("layer,fullrank_extra,3145728,6291456"));

    let layers = config("layers.json");
    let out = run(&["commcost", "--config", layers.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).lines().last().unwrap().starts_with("total,-,4276224,"));

    assert_eq!(run(&["commcost", "--rank", "0"]).status.code(), Some(2));

    let out = run(&["check", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).lines().all(|l| l.starts_with("PASS")));
}
