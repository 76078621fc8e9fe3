use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lcsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcsl"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lcsl(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `key: value` lines as numbers.
fn fields(stdout: &str) -> HashMap<String, f64> {
    stdout
        .lines()
        .filter_map(|l| l.split_once(": "))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fitted_scenario_model(dir: &Path, scenario: &str, n: &str) -> std::path::PathBuf {
    let data = dir.join("data.csv");
    let model = dir.join("model.json");
    ok(&[
        "simulate",
        "--scenario",
        scenario,
        "--n",
        n,
        "--seed",
        "5",
        "--out",
        s(&data),
    ]);
    let range = if scenario == "1" || scenario == "2" {
        "0,1"
    } else {
        "0,2"
    };
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--dose-range",
        range,
        "--restarts",
        "4",
        "--seed",
        "5",
        "--out",
        s(&model),
    ]);
    model
}

#[test]
fn toy_fit_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    fs::write(&data, "c1,dose,reward\n0.1,0.2,1.5\n-0.4,0.7,2.0\n0.9,0.5,0.25\n").unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let stdout = ok(&[
            "fit",
            "--data",
            s(&data),
            "--dose-range",
            "0,1",
            "--seed",
            "3",
            "--out",
            s(out),
        ]);
        assert!(stdout.contains("log_ml: "));
        assert!(stdout.contains("length_scales: "));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bad_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    let mut csv = String::from("c1,c2,dose,reward\n");
    for i in 0..10 {
        let reward = if i == 6 {
            "n/a".to_string()
        } else {
            format!("{}", i as f64 * 0.1)
        };
        csv.push_str(&format!("0.{i},0.5,0.{i},{reward}\n"));
    }
    fs::write(&data, csv).unwrap();
    let out = lcsl(&[
        "fit",
        "--data",
        s(&data),
        "--dose-range",
        "0,1",
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 7, column reward"));
}

#[test]
fn out_of_range_dose_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "c1,dose,reward\n0.1,0.2,1.0\n0.2,1.5,2.0\n").unwrap();
    let out = lcsl(&[
        "fit",
        "--data",
        s(&data),
        "--dose-range",
        "0,1",
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_io_code() {
    let out = lcsl(&["recommend", "--model", "/nonexistent/model.json", "--covariates", "0.5"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn scenario_one_recommendation_hits_vertex() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_scenario_model(dir.path(), "1", "200");
    let p95 = fields(&ok(&["recommend", "--model", s(&model), "--covariates", "0.5"]));
    assert!(p95["dose"].abs() <= 0.05, "dose {}", p95["dose"]);

    let p50 = fields(&ok(&[
        "recommend",
        "--model",
        s(&model),
        "--covariates",
        "0.5",
        "--percentile",
        "50",
    ]));
    assert!(p95["objective"] <= p50["objective"]);
    assert_eq!(p50["objective"], p50["mean_scaled"]);

    let json: String = fs::read_to_string(&model).unwrap();
    let grab = |key: &str| -> f64 {
        let at = json.find(&format!("\"{key}\"")).unwrap();
        let rest = &json[at + key.len() + 3..];
        rest.trim_start()
            .split([',', '\n', '}'])
            .next()
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let (r_min, r_max) = (grab("r_min"), grab("r_max"));
    let expected = r_min + (r_max - r_min) * p50["mean_scaled"];
    assert!((p50["mean"] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
}

#[test]
fn recommend_validates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_scenario_model(dir.path(), "1", "30");
    let wrong = lcsl(&["recommend", "--model", s(&model), "--covariates", "0.5,0.1"]);
    assert_eq!(wrong.status.code(), Some(2));
    let pct = lcsl(&[
        "recommend",
        "--model",
        s(&model),
        "--covariates",
        "0.5",
        "--percentile",
        "100",
    ]);
    assert_eq!(pct.status.code(), Some(2));
}

#[test]
fn explain_lists_everything_and_sums_to_mean() {
    let dir = tempfile::tempdir().unwrap();
    let model = fitted_scenario_model(dir.path(), "4", "40");
    let covs = "0.1,-0.2,0.3,0.4,-0.5,0.6,-0.7,0.8,0.9,-0.1";
    let stdout = ok(&[
        "explain",
        "--model",
        s(&model),
        "--covariates",
        covs,
        "--dose",
        "0.8",
        "--top",
        "40",
    ]);
    let f = fields(&stdout);
    assert!((f["listed_sum"] - f["mean_scaled"]).abs() <= 1e-8);

    let lines: Vec<&str> = stdout.lines().collect();
    let start = lines.iter().position(|l| *l == "rank,index,contribution").unwrap();
    assert_eq!(lines[start + 1..].iter().take_while(|l| !l.contains(':')).count(), 40);

    let rel_start = lines.iter().position(|l| *l == "feature,relevance").unwrap();
    let relevances: Vec<f64> = lines[rel_start + 1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(relevances.len(), 11);
    assert!(relevances.iter().all(|r| *r >= 0.0));
}

#[test]
fn explain_top_one_is_the_dominant_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    // One record sits on the query; the others are far away in covariate space.
    fs::write(
        &data,
        "c1,dose,reward\n0.0,0.5,3.0\n5.0,0.1,0.0\n-5.0,0.9,0.5\n6.0,0.4,0.2\n",
    )
    .unwrap();
    let model = dir.path().join("m.json");
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--dose-range",
        "0,1",
        "--restarts",
        "3",
        "--out",
        s(&model),
    ]);
    let stdout = ok(&[
        "explain",
        "--model",
        s(&model),
        "--covariates",
        "0",
        "--dose",
        "0.5",
        "--top",
        "1",
    ]);
    let first = stdout.lines().nth(1).unwrap();
    assert!(first.starts_with("1,0,"), "{stdout}");
}

#[test]
fn experiment_output_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let args = |out: &Path| {
        vec![
            "experiment".to_string(),
            "--scenario".into(),
            "3".into(),
            "--n-train".into(),
            "25,35".into(),
            "--replications".into(),
            "2".into(),
            "--n-test".into(),
            "100".into(),
            "--percentiles".into(),
            "95".into(),
            "--restarts".into(),
            "2".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
        ]
    };
    for out in [&a, &b] {
        let argv = args(out);
        let table = ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(table.contains("LCSL.95"));
    }
    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(csv, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,n_train,percentile,mean_vhat,std_vhat,completed,failed"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("3,25,95,"));
    assert!(csv.ends_with('\n'));
}

#[test]
fn zero_replications_is_a_validation_error() {
    let out = lcsl(&["experiment", "--scenario", "1", "--replications", "0", "--n-train", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("replications") && err.contains("training sizes"), "{err}");
}

#[test]
fn sweep_emits_one_row_per_percentile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    ok(&[
        "sweep",
        "--scenario",
        "3",
        "--n-train",
        "20",
        "--replications",
        "1",
        "--n-test",
        "50",
        "--restarts",
        "1",
        "--percentiles",
        "50:99:1",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scenario,n_train,percentile,mean_vhat,std_vhat");
    assert_eq!(lines.len(), 51);
    assert!(lines[1].starts_with("3,20,50,") && lines[50].starts_with("3,20,99,"));
}

#[test]
fn workers_env_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_lcsl"))
            .args([
                "experiment",
                "--scenario",
                "5",
                "--n-train",
                "20",
                "--replications",
                "3",
                "--n-test",
                "50",
            ])
            .args(["--restarts", "1", "--out", s(&out)])
            .env("LCSL_WORKERS", workers)
            .env("RUST_LOG", "off")
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out).unwrap()
    };
    assert_eq!(run("1", "one.csv"), run("3", "three.csv"));
}
