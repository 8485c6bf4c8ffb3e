use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use precond_ope::analyzer::analyze;
use precond_ope::mdp::InstanceFile;
use precond_ope::systems::Problem;
use serde_json::Value;

fn ope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ope")).args(args).output().expect("binary runs")
}

fn instance(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "instances", name].iter().collect();
    path.to_string_lossy().into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn fixture_summaries() {
    let out = ope(&["analyze", &instance("td_stable_fqi_divergent.json")]);
    assert_eq!(code(&out), 0);
    let first = stdout(&out).lines().next().unwrap().to_string();
    assert_eq!(first, "TD: stable (α ∈ (0, 21.309351)); FQI: diverges (ρ≈1.011068)");

    let out = ope(&["analyze", &instance("fqi_convergent_td_divergent.json")]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("TD: diverges; FQI: converges (ρ≈0.946282)"));

    let out = ope(&["analyze", &instance("zero_reward.json")]);
    assert!(stdout(&out).lines().next().unwrap().ends_with("fixed point exists trivially, θ=0"));
}

#[test]
fn generate_then_analyze_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let out = ope(&["generate", "--regime", "general", "--count", "3", "--seed", "5", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let files: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(files.len(), 3);
    for file in files {
        let out = ope(&["analyze", &file, "--alpha", "0.7", "--t", "4", "--format", "json"]);
        assert!(matches!(code(&out), 0 | 4), "{}", String::from_utf8_lossy(&out.stderr));
        let cli: Value = serde_json::from_str(&stdout(&out)).unwrap();

        let text = std::fs::read_to_string(&file).unwrap();
        let (mdp, features) = InstanceFile::from_json(&text).unwrap().into_parts().unwrap();
        let report = analyze(&Problem::new(mdp, features).unwrap(), 0.7, 4).unwrap();
        let expected = precond_ope::json::to_value(&report).unwrap();
        assert_eq!(cli["report"], expected);
    }
}

#[test]
fn json_output_is_stable() {
    let args = ["analyze", &instance("td_stable_fqi_divergent.json"), "--format", "json"];
    let a = stdout(&ope(&args));
    let b = stdout(&ope(&args));
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["alpha", "t", "summary", "report"]);
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"h": 2, "gamma": 0.5}"#).unwrap();
    let out = ope(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field"));

    let out = ope(&["analyze", &instance("td_stable_fqi_divergent.json"), "--gamma-override", "1.2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    let out = ope(&["verify", "--regime", "orthogonal_rows", "--h", "5", "--d", "2", "--count", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn marginal_verdict_exits_with_4() {
    // TD's iteration matrix sits within 1e-6 of the unit circle at this step.
    let out = ope(&["analyze", &instance("fqi_convergent_td_divergent.json"), "--alpha", "1e-3"]);
    assert_eq!(code(&out), 4);
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_string).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()));
    rows
}

#[test]
fn simulate_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("fqi");
    let out = ope(&[
        "simulate",
        &instance("fqi_convergent_td_divergent.json"),
        "--algo",
        "fqi",
        "--trace",
        prefix.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0);
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["status"], "converged");
    let trace: Value = serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert_eq!(trace["status"], "converged");
    let rows = read_csv(&prefix.with_extension("csv"));
    assert_eq!(rows[0], ["iter", "theta_0", "theta_1", "residual"]);

    // The limit solves the (nonsingular) target system.
    let text = std::fs::read_to_string(instance("fqi_convergent_td_divergent.json")).unwrap();
    let (mdp, features) = InstanceFile::from_json(&text).unwrap().into_parts().unwrap();
    let p = Problem::new(mdp, features).unwrap();
    let solved = p.target.a.clone().lu().solve(&p.target.b).unwrap();
    let limit: Vec<f64> = summary["limit"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (x, y) in limit.iter().zip(solved.iter()) {
        assert!((x - y).abs() < 1e-6 * y.abs().max(1.0));
    }

    let out = ope(&[
        "simulate",
        &instance("td_stable_fqi_divergent.json"),
        "--algo",
        "td",
        "--alpha",
        "25",
        "--trace",
        dir.path().join("td").to_str().unwrap(),
        "--format",
        "json",
    ]);
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["status"], "diverged");
}

#[test]
fn pfqi_with_one_inner_step_traces_td() {
    let dir = tempfile::tempdir().unwrap();
    let run = |algo: &str, name: &str| {
        let prefix = dir.path().join(name);
        let mut args = vec![
            "simulate".to_string(),
            instance("td_stable_fqi_divergent.json"),
            "--algo".into(),
            algo.into(),
            "--alpha".into(),
            "3".into(),
            "--theta0".into(),
            "1,2".into(),
            "--trace".into(),
            prefix.to_str().unwrap().into(),
        ];
        if algo == "pfqi" {
            args.extend(["--t".into(), "1".into()]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(code(&ope(&args)), 0);
        read_csv(&prefix.with_extension("csv"))
    };
    let td = run("td", "td");
    let pfqi = run("pfqi", "pfqi");
    assert_eq!(td.len(), pfqi.len());
    for (a, b) in td.iter().zip(&pfqi).skip(1) {
        assert_eq!(a[0], b[0]);
        for (x, y) in a.iter().zip(b).skip(1) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn verify_small_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let out = ope(&[
        "verify",
        "--regime",
        "on_policy",
        "--regime",
        "tabular",
        "--count",
        "10",
        "--seed",
        "1",
        "--reproducers",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["regimes"].as_array().unwrap().len(), 2);
    assert_eq!(v["regimes"][0]["tallies"]["on_policy_td_stable"]["passed"], 10);
}

#[test]
fn transitions_reports_td_interval() {
    let out = ope(&["transitions", &instance("td_stable_fqi_divergent.json"), "--ts", "1,2,4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("TD: stable, α ∈ (0, 21.309351)"));
    assert!(text.contains("t = 1: largest converging α ≈ 21.3093"));
}
