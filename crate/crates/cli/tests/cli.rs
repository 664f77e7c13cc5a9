use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn golden(name: &str) -> String {
    fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

fn airspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airspace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn toy_json() -> Value {
    serde_json::from_str(&fs::read_to_string(scenario("toy.json")).unwrap()).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in ["toy.json", "synthetic.json"] {
        let out = airspace(&["validate", s(&scenario(name))]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        assert_eq!(String::from_utf8_lossy(&out.stdout), "OK\n");
    }
}

#[test]
fn validate_lists_every_violation() {
    let dir = TempDir::new().unwrap();
    let mut v = toy_json();
    v["airspace"]["sectors"][0]["capacity"] = 0.into();
    v["flights"][1]["edges"][2]["upper_bound"] = 14.into();
    let path = write_json(dir.path(), "bad.json", &v);
    let out = airspace(&["validate", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("capacity 0"), "{text}");
    assert!(text.contains("edge 3-4 of flight F2"), "{text}");
}

#[test]
fn parse_errors_exit_one_with_location() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(
        &path,
        "{\n  \"schema_version\": 1,\n  \"airspace\": {\"sectors\": 3}\n}\n",
    )
    .unwrap();
    let out = airspace(&["validate", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 3") && err.contains("airspace.sectors"),
        "{err}"
    );

    let out = airspace(&["predict", s(&scenario("toy.json")), "--constraint", "maybe"]);
    assert_eq!(out.status.code(), Some(1));
    let out = airspace(&["simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn predict_matches_golden_reports() {
    let dir = TempDir::new().unwrap();
    let out = airspace(&["predict", s(&scenario("toy.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read_to_string(dir.path().join("arrivals.csv")).unwrap(),
        golden("toy_arrivals.csv")
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("congestion.csv")).unwrap(),
        golden("toy_congestion.csv")
    );
}

#[test]
fn predict_with_no_flights_writes_empty_reports() {
    let dir = TempDir::new().unwrap();
    let mut v = toy_json();
    v["flights"] = Value::Array(vec![]);
    let path = write_json(dir.path(), "empty.json", &v);
    let out = airspace(&["predict", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let arrivals = fs::read_to_string(dir.path().join("arrivals.csv")).unwrap();
    let congestion = fs::read_to_string(dir.path().join("congestion.csv")).unwrap();
    assert_eq!(arrivals.lines().count(), 1);
    assert_eq!(congestion.lines().count(), 1);
}

/// Ten uniform legs of pairwise incommensurate widths need more breakpoints
/// than the default piece cap allows.
fn long_haul(dir: &Path) -> PathBuf {
    let widths: Vec<f64> = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0]
        .iter()
        .map(|p| p.sqrt())
        .collect();
    let points: Vec<String> = (0..=widths.len()).map(|i| format!("P{i}")).collect();
    let edges: Vec<Value> = widths
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mean = 10.0 + w / 2.0;
            serde_json::json!({
                "from": points[i], "to": points[i + 1],
                "travel": {"type": "uniform", "lower": 10.0, "upper": 10.0 + w},
                "lower_bound": mean, "upper_bound": mean + 5.0
            })
        })
        .collect();
    let v = serde_json::json!({
        "schema_version": 1,
        "airspace": {"sectors": [{"id": "S", "capacity": 1, "gates": [{"entry": "P3", "exit": "P7"}]}]},
        "flights": [{
            "id": "LH1", "departure": {"type": "uniform", "lower": -5, "upper": 10},
            "scheduled_arrival": 130, "edges": edges, "routes": [points]
        }],
        "config": {"slice_width": 15}
    });
    write_json(dir, "long.json", &v)
}

fn widths_sum() -> f64 {
    [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0]
        .iter()
        .map(|p| p.sqrt())
        .sum()
}

#[test]
fn piece_overflow_points_to_discretize() {
    let dir = TempDir::new().unwrap();
    let path = long_haul(dir.path());
    let out = airspace(&["predict", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--discretize"));

    let out = airspace(&[
        "predict",
        s(&path),
        "--out",
        s(dir.path()),
        "--discretize",
        "0.25",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let arrivals = fs::read_to_string(dir.path().join("arrivals.csv")).unwrap();
    let expected: f64 = arrivals
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    // departure mean 2.5 plus ten legs of mean 10 + w/2
    let oracle = 2.5 + 100.0 + widths_sum() / 2.0;
    assert!((expected - oracle).abs() < 0.1, "{expected} vs {oracle}");
}

#[test]
fn simulate_is_reproducible_and_exact_for_point_inputs() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str, path: &Path, m: &str| {
        let out_dir = dir.path().join(tag);
        let out = airspace(&[
            "simulate",
            s(path),
            "--samples",
            m,
            "--seed",
            "5",
            "--dump-pdfs",
            "--dump-scenarios",
            "--out",
            s(&out_dir),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        [
            "arrivals.csv",
            "congestion.csv",
            "pdfs.csv",
            "scenarios.jsonl",
        ]
        .map(|f| fs::read_to_string(out_dir.join(f)).unwrap())
    };
    let toy = scenario("toy.json");
    let a = run("a", &toy, "2000");
    assert_eq!(a, run("b", &toy, "2000"));
    assert_eq!(a[3].lines().count(), 2000);

    let mut v = toy_json();
    for f in v["flights"].as_array_mut().unwrap() {
        f["departure"] = serde_json::json!({"type": "point", "t": 0});
        for e in f["edges"].as_array_mut().unwrap() {
            let lo = e["travel"]["lower"].as_f64().unwrap();
            let hi = e["travel"]["upper"].as_f64().unwrap();
            e["travel"] = serde_json::json!({"type": "point", "t": (lo + hi) / 2.0});
        }
    }
    let fixed = write_json(dir.path(), "fixed.json", &v);
    let [arrivals, congestion, ..] = run("fixed", &fixed, "1");
    // 0 + 11 + 17.5 + 15
    assert!(arrivals
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("F1,43.5,0.0,inf,"));
    // both flights sit in S1 over [11, 28.5]
    assert_eq!(
        congestion.lines().nth(1).unwrap(),
        "S1,10.0,20.0,1.0,0.0,true"
    );
}

#[test]
fn optimize_writes_clearances_and_history() {
    let dir = TempDir::new().unwrap();
    let out = airspace(&["optimize", s(&scenario("toy.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let clearances: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("clearances.json")).unwrap())
            .unwrap();
    assert_eq!(clearances.as_array().unwrap().len(), 8);
    for c in clearances.as_array().unwrap() {
        let (lo, t, hi) = (
            c["lower"].as_f64().unwrap(),
            c["target"].as_f64().unwrap(),
            c["upper"].as_f64().unwrap(),
        );
        assert!(lo <= t && t <= hi);
    }
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("iteration,best_objective,best_feasible,best_excess\n"));
    assert!(history.lines().count() > 2);
}

#[test]
fn optimize_without_congestion_keeps_the_plan() {
    let dir = TempDir::new().unwrap();
    let mut v = toy_json();
    v["airspace"]["sectors"][0]["capacity"] = 2.into();
    let path = write_json(dir.path(), "roomy.json", &v);
    let out = airspace(&["optimize", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for f in report["decision"]["flights"].as_array().unwrap() {
        assert_eq!(f["route"], 0);
        assert!(f["shifts"]
            .as_array()
            .unwrap()
            .iter()
            .all(|x| x.as_f64() == Some(0.0)));
    }
    assert_eq!(report["report"]["delay_cost"].as_f64(), Some(0.0));
}

#[test]
fn soft_mode_reproduces_hard_solution_on_toy() {
    let dir = TempDir::new().unwrap();
    let cost = |mode: &str| {
        let out_dir = dir.path().join(mode);
        let out = airspace(&[
            "optimize",
            s(&scenario("toy.json")),
            "--constraint",
            mode,
            "--out",
            s(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{mode}");
        let report: Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        (
            report["report"]["delay_cost"].as_f64().unwrap(),
            report["decision"]["flights"][0]["shifts"][0]
                .as_f64()
                .unwrap(),
        )
    };
    let (hard, hard_shift) = cost("hard");
    let (soft, soft_shift) = cost("soft");
    assert!((hard - soft).abs() < 1e-6, "{hard} vs {soft}");
    assert!((hard_shift - soft_shift).abs() < 1e-6);
}

#[test]
fn infeasible_hard_mode_exits_three_and_still_reports() {
    let dir = TempDir::new().unwrap();
    let out = airspace(&[
        "optimize",
        s(&scenario("toy.json")),
        "--epsilon",
        "0.05",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "no_feasible_solution");
    assert!(dir.path().join("clearances.json").exists());
}

#[test]
fn synthetic_instance_is_regulated_to_feasibility() {
    let dir = TempDir::new().unwrap();
    let out = airspace(&[
        "optimize",
        s(&scenario("synthetic.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["baseline"]["max_congestion"].as_f64().unwrap() > 0.75);
    assert!(report["report"]["max_congestion"].as_f64().unwrap() <= 0.75 + 1e-9);
}

fn monitor(dir: &Path, tag: &str, events: &str, extra: &[&str]) -> (Output, PathBuf) {
    let ev = dir.join(format!("{tag}.jsonl"));
    fs::write(&ev, events).unwrap();
    let out_dir = dir.join(tag);
    let mut args: Vec<String> = vec![
        "monitor".into(),
        s(&scenario("toy.json")).to_owned(),
        "--events".into(),
    ];
    args.push(s(&ev).to_owned());
    args.push("--out".into());
    args.push(s(&out_dir).to_owned());
    args.extend(extra.iter().map(|x| x.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    (airspace(&args), out_dir)
}

#[test]
fn monitor_without_events_emits_baseline() {
    let dir = TempDir::new().unwrap();
    let (out, _) = monitor(dir.path(), "none", "", &[]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    let step: Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(step["version"], 0);
    assert_eq!(step["clearances"].as_array().unwrap().len(), 8);
}

#[test]
fn monitored_departures_match_prediction_on_conditioned_file() {
    let dir = TempDir::new().unwrap();
    let events = concat!(
        "{\"timestamp\":0,\"flight\":\"F1\",\"kind\":\"departure\",\"observed_time\":0}\n",
        "{\"timestamp\":2,\"flight\":\"F2\",\"kind\":\"departure\",\"observed_time\":2}\n",
    );
    let (out, out_dir) = monitor(dir.path(), "dep", events, &[]);
    assert_eq!(out.status.code(), Some(0));
    let log = fs::read_to_string(out_dir.join("state.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    let monitored = last["congestion"][0]["congestion_probability"]
        .as_f64()
        .unwrap();

    let mut v = toy_json();
    v["flights"][0]["departure"] = serde_json::json!({"type": "point", "t": 0});
    v["flights"][1]["departure"] = serde_json::json!({"type": "point", "t": 2});
    let path = write_json(dir.path(), "conditioned.json", &v);
    let pred_dir = dir.path().join("pred");
    let out = airspace(&["predict", s(&path), "--out", s(&pred_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let congestion = fs::read_to_string(pred_dir.join("congestion.csv")).unwrap();
    let predicted: f64 = congestion
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (monitored - predicted).abs() < 1e-12,
        "{monitored} vs {predicted}"
    );
    // T2 = 2 + U(10, 12) ≤ 14 < 20 for F2, T2 = U(10, 12) for F1: both certainly present
    assert_eq!(predicted, 1.0);
}

#[test]
fn monitor_reports_bad_lines_and_honours_strict() {
    let dir = TempDir::new().unwrap();
    let events = concat!(
        "{\"timestamp\":0,\"flight\":\"F1\",\"kind\":\"departure\",\"observed_time\":0}\n",
        "{\"timestamp\":1,\"flight\":\"F7\",\"kind\":\"departure\",\"observed_time\":1}\n",
        "{\"timestamp\":2,\"flight\":\"F2\",\"kind\":\"departure\",\"observed_time\":2}\n",
    );
    let (out, _) = monitor(dir.path(), "lenient", events, &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("event line 2: unknown flight F7"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);

    let (out, _) = monitor(dir.path(), "strict", events, &["--strict"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn monitor_replay_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let events = concat!(
        "{\"timestamp\":0,\"flight\":\"F2\",\"kind\":\"departure\",\"observed_time\":-3}\n",
        "{\"timestamp\":10,\"flight\":\"F2\",\"kind\":\"overflight\",\"point\":\"2\",\"observed_time\":8}\n",
        "{\"timestamp\":30,\"flight\":\"F1\",\"kind\":\"departure\",\"observed_time\":9}\n",
    );
    let (a, da) = monitor(dir.path(), "a", events, &[]);
    let (b, db) = monitor(dir.path(), "b", events, &[]);
    assert_eq!(a.stdout, b.stdout);
    for f in ["clearances.jsonl", "state.jsonl"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap());
    }
}
