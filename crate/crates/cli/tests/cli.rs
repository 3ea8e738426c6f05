use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use trishare::mlp::ProviderBlock;
use trishare::sharing::{open_additive, read_share_file};

fn trishare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trishare"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_lines(args: &[&str]) -> Vec<Value> {
    let out = trishare(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn strip_wall(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_ms");
    }
    v
}

#[test]
fn analyze_reports_theta_and_closed_form() {
    let out = ok_lines(&[
        "analyze", "--lx", "0", "--rx", "1", "--lr", "0", "--rr", "50", "--trials", "100000",
    ]);
    let r = &out[0];
    assert_eq!(r["theta"].as_f64(), Some(100.0));
    assert!((r["closed_form"].as_f64().unwrap() - 0.980_198).abs() < 1e-6);
    assert_eq!(r["safe_interval"], serde_json::json!([-49.0, 50.0]));
    let ci = r["ci95"].as_array().unwrap();
    let emp = r["empirical"].as_f64().unwrap();
    assert!(ci[0].as_f64().unwrap() <= emp && emp <= ci[1].as_f64().unwrap());
}

#[test]
fn analyze_rejects_inverted_prior() {
    let out = trishare(&[
        "analyze", "--lx", "1", "--rx", "0", "--lr", "0", "--rr", "5",
    ]);
    assert!(!out.status.success());
}

#[test]
fn share_files_reconstruct_the_block() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("iris_a.csv");
    let mut text = String::from("sepal_length,sepal_width\n");
    let iris = trishare::mlp::Dataset::builtin("iris").unwrap();
    for r in 0..150 {
        text.push_str(&format!(
            "{},{}\n",
            iris.features.get(r, 0),
            iris.features.get(r, 1)
        ));
    }
    fs::write(&input, text).unwrap();
    let out_dir = dir.path().join("shares");
    let out = ok_lines(&[
        "share",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--owner",
        "2",
    ]);
    assert_eq!(out[0]["rows"], 150);
    assert_eq!(out[0]["cols"], 2);

    let views =
        [0, 1, 2].map(|i| read_share_file(out_dir.join(format!("iris_a.p{i}.prss"))).unwrap());
    let opened = open_additive(&views).unwrap();
    let want = ProviderBlock::from_csv(&input, 3)
        .unwrap()
        .features
        .unwrap();
    for (g, w) in opened.as_slice().iter().zip(want.as_slice()) {
        assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{g} vs {w}");
    }
}

#[test]
fn share_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "a,b\n1,2\n3,x\n").unwrap();
    let out = trishare(&[
        "share",
        "--input",
        input.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv:3:"), "{err}");
}

#[test]
fn bench_csv_has_exact_relu_cost() {
    let out = trishare(&[
        "bench",
        "--protocol",
        "relu",
        "--sizes",
        "50",
        "--repetitions",
        "2",
        "--csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("protocol,n,exponent_span,repetitions,mean_ms,bytes,bits,rounds,mre")
    );
    let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cells[0], "relu");
    assert_eq!(cells[6], "3040000");
    assert_eq!(cells[7], "5");
    assert!(cells[8].parse::<f64>().unwrap() < 1e-8);
}

#[test]
fn bench_accepts_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"protocol":"matmul","sizes":[10,20],"repetitions":3,"exponent_span":0}"#,
    )
    .unwrap();
    let rows = ok_lines(&["bench", "--config", spec.to_str().unwrap()]);
    assert_eq!(rows.len(), 2);
    for (r, n) in rows.iter().zip([10u64, 20]) {
        assert_eq!(r["n"], n);
        assert_eq!(r["bits"], 3 * n * n * 64);
        assert!(r["mre"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn train_is_reproducible_and_predict_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    let args = [
        "train",
        "--dataset",
        "iris",
        "--seed",
        "2",
        "--checkpoint",
        ck.to_str().unwrap(),
    ];
    let a = ok_lines(&args);
    let b = ok_lines(&args);
    assert_eq!(a.len(), 6);
    assert_eq!(
        a.iter().cloned().map(strip_wall).collect::<Vec<_>>(),
        b.iter().cloned().map(strip_wall).collect::<Vec<_>>()
    );
    let summary = a.last().unwrap();
    assert!(summary["final_accuracy"].as_f64().unwrap() >= 0.93);

    assert!(Path::new(&ck).join("manifest.json").exists());
    let pred = ok_lines(&[
        "predict",
        "--dataset",
        "iris",
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(pred[0]["predictions"], summary["predictions"]);
    assert_eq!(pred[0]["accuracy"], summary["final_accuracy"]);
}

#[test]
fn train_csv_output() {
    let out = trishare(&["train", "--dataset", "wine", "--csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("epoch,loss,accuracy,bytes_total,rounds_total,wall_ms\n"));
    assert_eq!(text.lines().count(), 6);
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn three_serve_processes_match_inprocess_training() {
    let addrs = [free_port(), free_port(), free_port()];
    let handles: Vec<_> = (0..3)
        .map(|i| {
            let peers: Vec<&str> = (0..3)
                .filter(|&j| j != i)
                .map(|j| addrs[j].as_str())
                .collect();
            Command::new(env!("CARGO_BIN_EXE_trishare"))
                .args(["serve", "--party", &i.to_string(), "--listen", &addrs[i]])
                .args([
                    "--peers",
                    &peers.join(","),
                    "--dataset",
                    "iris",
                    "--seed",
                    "4",
                ])
                .stdout(std::process::Stdio::piped())
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    let outs: Vec<Output> = handles
        .into_iter()
        .map(|h| h.wait_with_output().unwrap())
        .collect();
    for o in &outs {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let p0: Vec<Value> = String::from_utf8(outs[0].stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let local = ok_lines(&["train", "--dataset", "iris", "--seed", "4"]);
    assert_eq!(
        p0.last().unwrap()["predictions"],
        local.last().unwrap()["predictions"]
    );
    for (s, l) in p0.iter().zip(&local).take(5) {
        assert_eq!(s["loss"], l["loss"]);
        assert_eq!(s["rounds_total"], l["rounds_total"]);
    }
}
