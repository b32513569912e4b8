use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn graymod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graymod"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = graymod(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 12] = [
    "--dim",
    "8",
    "--hidden",
    "8",
    "--att-hidden",
    "6",
    "--att-layers",
    "3",
    "--epochs",
    "2",
    "--heldout-frac",
    "0.1",
];

#[test]
fn train_eval_tune_score_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.jsonl");
    let dev = tmp.path().join("dev.jsonl");
    ok(&[
        "gen-synth",
        "--n",
        "300",
        "--ratio",
        "0.3",
        "--seed",
        "1",
        "--out",
        p(&data),
    ]);
    ok(&[
        "gen-synth",
        "--n",
        "120",
        "--ratio",
        "0.3",
        "--seed",
        "2",
        "--out",
        p(&dev),
    ]);
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 300);

    let ckpt = tmp.path().join("ckpt");
    let mut args = vec![
        "train",
        "--data",
        p(&data),
        "--variant",
        "a-rnn",
        "--seed",
        "7",
        "--out",
        p(&ckpt),
    ];
    args.extend(SMALL);
    let out = ok(&args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("\"seed\":7") && stderr.contains("\"att_layers\":3"),
        "{stderr}"
    );
    for file in [
        "manifest.json",
        "vocab.tsv",
        "embeddings",
        "head.w_p",
        "att.w1",
        "train_report.json",
    ] {
        assert!(ckpt.join(file).exists(), "{file}");
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(ckpt.join("train_report.json")).unwrap()).unwrap();
    assert!(report["epochs"].as_array().unwrap().len() <= 2);

    let again = tmp.path().join("again");
    let mut args2 = vec![
        "train",
        "--data",
        p(&data),
        "--variant",
        "a-rnn",
        "--seed",
        "7",
        "--out",
        p(&again),
    ];
    args2.extend(SMALL);
    ok(&args2);
    for file in [
        "manifest.json",
        "vocab.tsv",
        "embeddings",
        "gru.w_h",
        "att.w1",
        "head.w_p",
    ] {
        assert_eq!(
            fs::read(ckpt.join(file)).unwrap(),
            fs::read(again.join(file)).unwrap(),
            "{file}"
        );
    }

    let eval = json_stdout(&ok(&["eval", "--data", p(&dev), "--model", p(&ckpt)]));
    assert!(
        eval["auc"].is_f64() && eval.get("spearman").is_some(),
        "{eval}"
    );
    assert_eq!(eval["report"]["n"], 120);
    let tuned_eval = json_stdout(&ok(&[
        "eval",
        "--data",
        p(&dev),
        "--model",
        p(&ckpt),
        "--dev",
        p(&dev),
        "--coverage",
        "0.7",
    ]));
    assert_eq!(tuned_eval["report"]["gray"], 36);

    let th_path = tmp.path().join("out/th.json");
    let out = ok(&[
        "tune",
        "--dev",
        p(&dev),
        "--model",
        p(&ckpt),
        "--coverage",
        "0.8",
        "--verify",
        "--out",
        p(&th_path),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("verify: ok"));
    let th: Value = serde_json::from_str(&fs::read_to_string(&th_path).unwrap()).unwrap();
    for key in [
        "t_a",
        "t_r",
        "coverage",
        "beta",
        "dev_macro_f_beta",
        "tuned_at",
    ] {
        assert!(th.get(key).is_some(), "{key}");
    }
    assert!(th["t_a"].as_f64() <= th["t_r"].as_f64());
    let again = json_stdout(&ok(&[
        "tune",
        "--dev",
        p(&dev),
        "--model",
        p(&ckpt),
        "--coverage",
        "0.8",
    ]));
    assert_eq!(again, th);

    let scores = tmp.path().join("scores.jsonl");
    ok(&[
        "score",
        "--data",
        p(&dev),
        "--model",
        p(&ckpt),
        "--out",
        p(&scores),
    ]);
    let lines: Vec<Value> = fs::read_to_string(&scores)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 120);
    let sum: f64 = lines[0]["attention"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["weight"].as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[test]
fn list_baseline_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.jsonl");
    ok(&["gen-synth", "--n", "400", "--seed", "3", "--out", p(&data)]);
    let list = tmp.path().join("list.tsv");
    ok(&[
        "build-list",
        "--data",
        p(&data),
        "--min-df",
        "2",
        "--out",
        p(&list),
    ]);
    assert!(fs::read_to_string(&list).unwrap().lines().count() > 0);
    let eval = json_stdout(&ok(&["eval", "--data", p(&data), "--model", p(&list)]));
    assert!(eval["auc"].as_f64().unwrap() > 0.9, "{eval}");
    assert_eq!(eval["variant"], "list");

    let dir = tmp.path().join("listmodel");
    let out = ok(&[
        "train",
        "--data",
        p(&data),
        "--variant",
        "list",
        "--min-df",
        "2",
        "--out",
        p(&dir),
    ]);
    assert_eq!(json_stdout(&out)["variant"], "list");
    let eval = json_stdout(&ok(&["eval", "--data", p(&data), "--model", p(&dir)]));
    assert_eq!(eval["variant"], "list");
}

#[test]
fn exit_codes() {
    assert_eq!(graymod(&["--help"]).status.code(), Some(0));
    assert_eq!(graymod(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        graymod(&["tune", "--dev", "x", "--model", "y", "--unknown"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        graymod(&["tune", "--dev", "x", "--model", "y", "--coverage", "0"])
            .status
            .code(),
        Some(1)
    );
    let missing = graymod(&[
        "eval",
        "--data",
        "/nonexistent.jsonl",
        "--model",
        "/nonexistent",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"a\",\"text\":\"x\",\"label\":3}\n").unwrap();
    let out = graymod(&[
        "build-list",
        "--data",
        p(&bad),
        "--out",
        p(&tmp.path().join("l.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn check_grad_reports_error() {
    let out = ok(&["check-grad", "--variant", "da-rnn", "--seed", "1"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"seed\":1"));
    ok(&[
        "check-grad",
        "--variant",
        "cnn",
        "--seed",
        "0",
        "--seeds",
        "2",
    ]);
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, Value) {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let payload = raw.split("\r\n\r\n").nth(1).unwrap_or("");
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(model: &Path, dev: &Path, store: &Path) -> (Server, u16) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_graymod"))
        .args([
            "serve",
            "--model",
            p(model),
            "--dev",
            p(dev),
            "--store",
            p(store),
            "--port",
            "0",
        ])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let mut lines = BufReader::new(stderr).lines();
    let port = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(addr) = line.strip_prefix("listening on http://") {
            break addr.rsplit(':').next().unwrap().parse().unwrap();
        }
    };
    std::thread::spawn(move || for _ in lines {});
    (Server(child), port)
}

#[test]
fn serve_persists_across_restarts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.jsonl");
    ok(&["gen-synth", "--n", "300", "--seed", "5", "--out", p(&data)]);
    let list = tmp.path().join("list.tsv");
    ok(&[
        "build-list",
        "--data",
        p(&data),
        "--min-df",
        "5",
        "--out",
        p(&list),
    ]);
    let store = tmp.path().join("store");

    let texts: Vec<String> = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .take(40)
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["text"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    let (queue, metrics) = {
        let (_server, port) = start_server(&list, &data, &store);
        let (status, th) = http(port, "GET", "/api/thresholds", "");
        assert_eq!(status, 200);
        assert_eq!(th["coverage"], 0.8);
        for (i, text) in texts.iter().enumerate() {
            let body = serde_json::json!({ "text": text, "ts": i }).to_string();
            assert_eq!(http(port, "POST", "/api/comments", &body).0, 200);
        }
        let (_, queue) = http(port, "GET", "/api/queue?limit=1000", "");
        if let Some(first) = queue["items"].as_array().unwrap().first() {
            let path = format!("/api/queue/{}/decision", first["id"].as_str().unwrap());
            let (status, item) = http(port, "POST", &path, r#"{"label":"reject","moderator":"m"}"#);
            assert_eq!(status, 200);
            assert_eq!(item["decision"], "human_reject");
        }
        let (_, queue) = http(port, "GET", "/api/queue?limit=1000", "");
        let (_, metrics) = http(port, "GET", "/api/metrics", "");
        assert_eq!(metrics["counters"]["total"], 40);
        (queue, metrics)
    };
    assert!(store.join("journal.jsonl").exists());
    let (_server, port) = start_server(&list, &data, &store);
    assert_eq!(http(port, "GET", "/api/queue?limit=1000", "").1, queue);
    assert_eq!(http(port, "GET", "/api/metrics", "").1, metrics);
    let (_, th) = http(port, "GET", "/api/thresholds", "");
    assert_eq!(th["version"], 1);
}
