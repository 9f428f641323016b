use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const SPEC: &str = "task_count = 300\nseed = 11\nrate_amplitude = 0.35\n";
const CONFIG: &str = "[train]\nmax_epochs = 4\nkfold_k = 3\nseed = 9\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowd-sched"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "crowd-sched {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
        std::fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        run(&["synth", "--spec", s(&self.path("spec.toml")), "--out", s(&out)]);
        out
    }

    fn train(&self, dataset: &Path, name: &str) -> PathBuf {
        let out = self.path(name);
        run(&[
            "train",
            "--dataset",
            s(dataset),
            "--config",
            s(&self.path("config.toml")),
            "--out",
            s(&out),
        ]);
        out
    }
}

#[test]
fn synth_writes_dataset_and_truth_deterministically() {
    let ws = Workspace::new();
    let a = ws.synth("a.csv");
    let b = ws.synth("b.csv");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let truth = std::fs::read_to_string(ws.path("a.truth.csv")).unwrap();
    assert!(truth.starts_with("task_id,phi,open_tasks,avg_similarity,prize,duration,failed"));
    assert_eq!(truth.lines().count(), 301);

    let json = ws.path("c.json");
    let out = run(&[
        "synth",
        "--spec",
        s(&ws.path("spec.toml")),
        "--out",
        s(&json),
        "--truth",
        s(&ws.path("t.csv")),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["tasks"], 300);
    assert!(ws.path("t.csv").is_file());
    let tasks: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(tasks.as_array().unwrap().len(), 300);
}

#[test]
fn snapshot_reports_platform_state() {
    let ws = Workspace::new();
    let ds = ws.synth("d.csv");
    let v = stdout_json(&run(&["snapshot", "--dataset", s(&ds), "--day", "10"]));
    assert_eq!(v["day"], 10);
    assert_eq!(
        v["not_d"].as_u64().unwrap() as usize,
        v["open_tasks"].as_array().unwrap().len()
    );
    for k in ["ats_d", "ta_d", "tf_d"] {
        assert!(v[k].as_f64().unwrap() >= 0.0, "{k}");
    }
    assert_eq!(v["projections"].as_array().unwrap().len(), 2);

    let with_task = stdout_json(&run(&[
        "snapshot",
        "--dataset",
        s(&ds),
        "--day",
        "10",
        "--task",
        "T00005",
    ]));
    assert_eq!(with_task["day"], 10);

    let out = bin()
        .args(["snapshot", "--dataset", s(&ds), "--day", "1", "--task", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown task"));
}

#[test]
fn train_and_crossval_are_reproducible() {
    let ws = Workspace::new();
    let ds = ws.synth("d.json");
    let m1 = ws.train(&ds, "m1.json");
    let m2 = ws.train(&ds, "m2.json");
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let model: Value = serde_json::from_str(&std::fs::read_to_string(&m1).unwrap()).unwrap();
    assert_eq!(model["layer_dims"], serde_json::json!([4, 32, 16, 8, 4, 2, 1]));

    let cfg = ws.path("config.toml");
    let cv = |seq: bool| {
        let mut args = vec!["crossval", "--dataset", s(&ds), "--config", s(&cfg), "--k", "4"];
        if seq {
            args.push("--sequential");
        }
        run(&args).stdout
    };
    let par = cv(false);
    assert_eq!(par, cv(true));
    let report: Value = serde_json::from_slice(&par).unwrap();
    assert_eq!(report["k"], 4);
    assert_eq!(report["fold_losses"].as_array().unwrap().len(), 4);
}

#[test]
fn schedule_emits_json_csv_and_plot_data() {
    let ws = Workspace::new();
    let ds = ws.synth("d.csv");
    let model = ws.train(&ds, "m.json");
    let summary: Value = stdout_json(&run(&["snapshot", "--dataset", s(&ds), "--day", "0"]));
    assert!(summary.is_object());

    let tasks: Vec<Vec<String>> = csv_rows(&ds);
    let header = &tasks[0];
    let pcol = header.iter().position(|h| h == "project_id").expect("project column");
    let project = tasks[1][pcol].clone();
    let members = tasks[1..].iter().filter(|r| r[pcol] == project).count();

    let csv = ws.path("out/decisions.csv");
    let plot = ws.path("plots");
    let out = run(&[
        "schedule",
        "--dataset",
        s(&ds),
        "--model",
        s(&model),
        "--project",
        &project,
        "--csv",
        s(&csv),
        "--plot",
        s(&plot),
    ]);
    let sched = stdout_json(&out);
    assert_eq!(sched["mode"], "static");
    assert_eq!(sched["project_id"], project.as_str());
    assert_eq!(sched["decisions"].as_array().unwrap().len(), members);
    assert!(sched["mean_after"].as_f64().unwrap() <= sched["mean_before"].as_f64().unwrap());

    let rows = csv_rows(&csv);
    assert_eq!(rows[0], ["task_id", "planned_day", "p0", "p1", "p2", "chosen_offset"]);
    assert_eq!(rows.len(), members + 1);
    let first = &sched["decisions"][0];
    assert_eq!(
        rows[1][2].parse::<f64>().unwrap(),
        first["predictions"][0].as_f64().unwrap()
    );
    assert_eq!(csv_rows(&plot.join("probability_curve.csv")).len(), members + 1);
    assert_eq!(csv_rows(&plot.join("timeline.csv")).len(), members + 1);

    let rolling = ws.path("rolling.json");
    run(&[
        "schedule",
        "--dataset",
        s(&ds),
        "--model",
        s(&model),
        "--project",
        &project,
        "--mode",
        "rolling",
        "--out",
        s(&rolling),
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&rolling).unwrap()).unwrap();
    assert_eq!(r["mode"], "rolling");

    let all = stdout_json(&run(&[
        "schedule",
        "--dataset",
        s(&ds),
        "--model",
        s(&model),
        "--project",
        "all",
        "--sequential",
    ]));
    assert_eq!(all["decisions"].as_array().unwrap().len(), 300);

    let bad = bin()
        .args([
            "schedule",
            "--dataset",
            s(&ds),
            "--model",
            s(&model),
            "--project",
            "ghost",
        ])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let bad = bin()
        .args([
            "schedule",
            "--dataset",
            s(&ds),
            "--model",
            s(&model),
            "--project",
            &project,
            "--mode",
            "weekly",
        ])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn schedule_accepts_a_file_of_new_tasks() {
    let ws = Workspace::new();
    let ds = ws.synth("d.csv");
    let model = ws.train(&ds, "m.json");
    let text = std::fs::read_to_string(&ds).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let subset: Vec<&str> = lines.take(5).collect();
    let newfile = ws.path("new.csv");
    std::fs::write(&newfile, format!("{header}\n{}\n", subset.join("\n"))).unwrap();
    let sched = stdout_json(&run(&[
        "schedule",
        "--dataset",
        s(&ds),
        "--model",
        s(&model),
        "--project",
        s(&newfile),
    ]));
    assert_eq!(sched["decisions"].as_array().unwrap().len(), 5);
}

#[test]
fn eval_reports_every_predictor() {
    let ws = Workspace::new();
    let ds = ws.synth("d.csv");
    let table = ws.path("cmp.csv");
    let out = run(&[
        "eval",
        "--dataset",
        s(&ds),
        "--config",
        s(&ws.path("config.toml")),
        "--csv",
        s(&table),
    ]);
    let report = stdout_json(&out);
    let names: Vec<&str> = report["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["predictor"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["network", "linear-regression", "moving-average", "constant-mean"]
    );
    let rows = csv_rows(&table);
    assert_eq!(&rows[0][..5], ["predictor", "mse", "md_mse", "std_mse", "accuracy"]);
    assert_eq!(rows.len(), 5);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let ws = Workspace::new();
    let out = bin()
        .args(["train", "--dataset", "/nonexistent.csv", "--out", s(&ws.path("m.json"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));

    std::fs::write(ws.path("bad.toml"), "[train]\nbatch = 3\n").unwrap();
    let ds = ws.synth("d.csv");
    let out = bin()
        .args(["crossval", "--dataset", s(&ds), "--config", s(&ws.path("bad.toml"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch"));
}

#[test]
fn serve_reads_listen_address_from_env() {
    let ws = Workspace::new();
    let ds = ws.synth("d.csv");
    let model = ws.train(&ds, "m.json");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = bin()
        .args(["serve", "--dataset", s(&ds), "--model", s(&model)])
        .env("CROWD_SCHED_LISTEN", &addr)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();

    let deadline = Instant::now() + Duration::from_secs(30);
    let response = loop {
        if let Ok(mut conn) = TcpStream::connect(&addr) {
            conn.write_all(format!("GET /healthz HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
                .unwrap();
            let mut buf = String::new();
            conn.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "service never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"models\":1"), "{response}");
    assert!(response.contains("\"datasets\":1"), "{response}");
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}
