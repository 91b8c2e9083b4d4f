use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};
use tsc_harness::bridge::WireClient;

fn tsc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsc"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body.to_string()).unwrap();
    path
}

fn small(agent: &str) -> Value {
    json!({
        "network": configs_dir().join("network_1x2.json"),
        "demand": configs_dir().join("demand_1x2.csv"),
        "agent": agent,
        "fluctuation_ratios": [0.0, 0.2],
        "repeats": 2,
        "master_seed": 8
    })
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap()
}

#[test]
fn eval_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eval.json", small("feedback"));
    let out = dir.path().join("out");
    let run = tsc().args(["eval", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let reply: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(reply["ok"], json!(true));
    assert_eq!(reply["episodes"], json!(8));

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let groups = summary["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 4);
    let links = summary["links_in_scope"].as_array().unwrap().len() as u64;
    for g in groups {
        assert_eq!(g["stats"]["observations"].as_u64().unwrap(), links * 144 * 2);
        let hist: u64 = g["histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(hist, links * 144 * 2);
    }
    for file in ["queues.csv", "histogram.csv", "comparison.csv"] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert!(text.starts_with("# format_version: 1"), "{file}");
    }

    let rebinned = dir.path().join("rebinned.csv");
    let hist = tsc().args(["histogram", "--in"]).arg(out.join("queues.csv")).arg("--out").arg(&rebinned).output().unwrap();
    assert!(hist.status.success(), "{}", String::from_utf8_lossy(&hist.stderr));
    assert_eq!(fs::read_to_string(&rebinned).unwrap(), fs::read_to_string(out.join("histogram.csv")).unwrap());
}

#[test]
fn zero_episode_training_leaves_an_empty_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = small("td");
    body["episodes"] = json!(0);
    let cfg = write_config(dir.path(), "train.json", body);
    let out = dir.path().join("run");
    let run = tsc().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let curve = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 1);
    assert!(!out.join("checkpoint.json").exists());
}

#[test]
fn short_training_checkpoint_feeds_eval() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = small("td");
    body["episodes"] = json!(3);
    let cfg = write_config(dir.path(), "td.json", body);
    let out = dir.path().join("run");
    let run = tsc().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let curve = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let missing = tsc().args(["eval", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("e1")).output().unwrap();
    assert!(!missing.status.success());
    assert_eq!(stderr_json(&missing)["error"], json!("missing_checkpoint"));

    let eval = tsc()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(out.join("checkpoint.json"))
        .arg("--out")
        .arg(dir.path().join("e2"))
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn bad_inputs_fail_with_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Value, &str)> = vec![
        ({ let mut v = small("fixed"); v["repeats"] = json!(0); v }, "config"),
        ({ let mut v = small("fixed"); v["colour"] = json!("red"); v }, "parse"),
        ({ let mut v = small("fixed"); v["demand"] = json!("nowhere.csv"); v }, "io"),
        ({ let mut v = small("fixed"); v["format_version"] = json!(9); v }, "config"),
    ];
    for (i, (body, code)) in cases.into_iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), body);
        let run = tsc().args(["eval", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
        assert!(!run.status.success());
        let err = stderr_json(&run);
        assert_eq!(err["ok"], json!(false));
        assert_eq!(err["error"], json!(code), "case {i}: {err}");
        assert!(err["message"].is_string());
    }

    let remote = write_config(dir.path(), "remote.json", small("remote"));
    let run = tsc().args(["train", "--config"]).arg(&remote).arg("--out").arg(dir.path().join("r")).output().unwrap();
    assert_eq!(stderr_json(&run)["error"], json!("not_learnable"));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "# format_version: 1\nagent,ratio,repeat,seed,step,link,q\n").unwrap();
    let run = tsc().args(["histogram", "--in"]).arg(&empty).arg("--out").arg(dir.path().join("h.csv")).output().unwrap();
    assert!(!run.status.success());
    assert_eq!(stderr_json(&run)["error"], json!("empty_table"));
}

#[test]
fn serve_answers_one_client_then_exits() {
    let mut child = tsc()
        .args(["serve", "--config"])
        .arg(configs_dir().join("train_td_1x2.json"))
        .args(["--port", "0", "--max-clients", "1"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let banner: Value = serde_json::from_str(&line).unwrap();
    let addr = banner["listening"].as_str().unwrap().to_string();

    let mut client = WireClient::connect(&addr).unwrap();
    let reset: Value = serde_json::from_str(&client.send_raw(r#"{"op":"reset","seed":1}"#).unwrap()).unwrap();
    assert_eq!(reset["state"][0][0], json!(0.5));
    assert_eq!(reset["state"][1][1], json!(0.5));
    assert_eq!(reset["state"][0][1], json!(1.0));
    let step: Value = serde_json::from_str(&client.send_raw(r#"{"op":"step","action":5}"#).unwrap()).unwrap();
    assert_eq!(step["info"]["splits"], json!([50, 52]));
    client.send_raw(r#"{"op":"close"}"#).unwrap();
    assert!(child.wait().unwrap().success());
}
