use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use antifall::harness::Detection;
use antifall::synth::{builtin_pack, training_pack, ScenarioPack};
use tempfile::TempDir;

fn afd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("afd runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = afd(dir, args);
    assert!(
        out.status.success(),
        "afd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    afd(dir, args).status.code().expect("exit code")
}

const STILL: &str = r#"{"seed":7,"duration_ms":30000,"rate_hz":100,"noise_sigma":0.02,"events":[]}"#;
const FALL: &str = r#"{"seed":11,"duration_ms":12000,"rate_hz":100,"noise_sigma":0.02,
  "events":[{"kind":"fall","start_ms":4000,"end_ms":5200}]}"#;

fn calibrated(dir: &Path) {
    fs::write(dir.join("still.scenario.json"), STILL).unwrap();
    ok(dir, &["simulate", "--scenario", "still.scenario.json", "--out", "still.csi.jsonl"]);
    ok(dir, &["calibrate", "--trace", "still.csi.jsonl", "--out", "th.json"]);
}

#[test]
fn simulate_train_detect_eval() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    calibrated(dir);

    let mut pack = training_pack();
    pack.scenarios.truncate(10);
    fs::write(dir.join("train.pack.json"), pack.to_json()).unwrap();
    ok(dir, &["simulate", "--pack", "train.pack.json", "--out-dir", "train"]);
    for sc in &pack.scenarios {
        let id = sc.trace_id();
        ok(
            dir,
            &[
                "segment",
                "--trace",
                &format!("train/{id}.csi.jsonl"),
                "--threshold",
                "th.json",
                "--truth",
                &format!("train/{id}.truth.json"),
                "--out-dir",
                "segs",
            ],
        );
    }
    let labels: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&fs::read(dir.join("segs/labels.json")).unwrap()).unwrap();
    assert_eq!(labels.len(), 40, "four falls per training trace");
    ok(dir, &["train", "--segments", "segs", "--labels", "segs/labels.json", "--out", "m.ocsvm.json"]);

    fs::write(dir.join("fall.scenario.json"), FALL).unwrap();
    ok(dir, &["simulate", "--scenario", "fall.scenario.json", "--out", "fall.csi.jsonl"]);
    assert!(dir.join("fall.truth.json").exists());
    let base = ["detect", "--trace", "fall.csi.jsonl", "--threshold", "th.json", "--model", "m.ocsvm.json"];
    let batch: Vec<Detection> = serde_json::from_str(&ok(dir, &base)).unwrap();
    let mut streamed_args = base.to_vec();
    streamed_args.extend(["--stream", "--out", "d.json"]);
    ok(dir, &streamed_args);
    let streamed: Vec<Detection> = serde_json::from_slice(&fs::read(dir.join("d.json")).unwrap()).unwrap();
    assert_eq!(batch, streamed);

    let report: serde_json::Value =
        serde_json::from_str(&ok(dir, &["eval", "--detections", "d.json", "--truth", "fall.truth.json"])).unwrap();
    assert!(report["fdr"].as_f64().is_some());
    assert_eq!(report["missed"].as_u64().unwrap() + report["matched"].as_u64().unwrap(), 1);
    assert!(report["fpr_definition"].as_str().unwrap().contains("false_alarms"));
}

#[test]
fn segment_reports_endpoints() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    calibrated(dir);
    fs::write(dir.join("fall.scenario.json"), FALL).unwrap();
    ok(dir, &["simulate", "--scenario", "fall.scenario.json", "--out", "fall.csi.jsonl"]);
    let out: serde_json::Value =
        serde_json::from_str(&ok(dir, &["segment", "--trace", "fall.csi.jsonl", "--threshold", "th.json"])).unwrap();
    let eps = out["endpoints_us"].as_array().unwrap();
    assert_eq!(eps.len(), 1);
    assert!((eps[0].as_i64().unwrap() - 5_200_000).abs() <= 300_000);
}

#[test]
fn pack_matches_builtin() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["pack", "--name", "burst3s", "--out", "b.json"]);
    let p = ScenarioPack::from_json(&fs::read(tmp.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(p, builtin_pack("burst3s").unwrap());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(code(dir, &["calibrate", "--trace", "missing.csi.jsonl", "--out", "th.json"]), 2);
    fs::write(dir.join("bad.csi.jsonl"), "{\"type\":\"header\"}\n").unwrap();
    assert_eq!(code(dir, &["calibrate", "--trace", "bad.csi.jsonl", "--out", "th.json"]), 2);
    fs::write(dir.join("bad.scenario.json"), r#"{"seed":1}"#).unwrap();
    assert_eq!(code(dir, &["simulate", "--scenario", "bad.scenario.json", "--out", "t.csi.jsonl"]), 2);

    calibrated(dir);
    let seg = ["segment", "--trace", "still.csi.jsonl", "--threshold", "th.json"];
    assert_eq!(code(dir, &[&["--set", "segment.nope=1"], &seg[..]].concat()), 3);
    assert_eq!(code(dir, &[&["--set", "svm.nu"], &seg[..]].concat()), 3);
    fs::write(dir.join("cfg.json"), r#"{"svm":{"nu":0}}"#).unwrap();
    assert_eq!(code(dir, &[&["--config", "cfg.json"], &seg[..]].concat()), 3);
    fs::write(dir.join("cfg.json"), r#"{"segment":{"var_window_ms":300}}"#).unwrap();
    assert_eq!(code(dir, &[&["--config", "cfg.json"], &seg[..]].concat()), 3, "threshold calibrated for 200 ms");
    assert_eq!(code(dir, &[&["--set", "segment.window_ms=2900"], &seg[..]].concat()), 0);

    // a still trace yields no windows, so nothing to train or search on
    ok(dir, &["segment", "--trace", "still.csi.jsonl", "--threshold", "th.json", "--truth", "still.truth.json", "--out-dir", "segs"]);
    assert_eq!(code(dir, &["train", "--segments", "segs", "--labels", "segs/labels.json", "--out", "m.json"]), 4);
    fs::create_dir(dir.join("corpus")).unwrap();
    fs::copy(dir.join("still.csi.jsonl"), dir.join("corpus/still.csi.jsonl")).unwrap();
    fs::copy(dir.join("still.truth.json"), dir.join("corpus/still.truth.json")).unwrap();
    assert_eq!(code(dir, &["search-window", "--corpus", "corpus", "--threshold", "th.json"]), 4);
}
