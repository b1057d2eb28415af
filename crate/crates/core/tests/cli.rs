//! End-to-end runs of the `doha` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn doha(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doha"))
        .args(args)
        .current_dir(dir)
        .env_remove("DOHA_THREADS")
        .output()
        .expect("spawn doha")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = doha(dir, args);
    assert!(
        out.status.success(),
        "doha {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn synth_reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        ok(d.path(), &["synth", "--hr", "72", "--noise", "0.1", "--seed", "3", "--harmonics", "0.3,0.1", "--out", name]);
    }
    assert_eq!(bytes(d.path().join("a.json")), bytes(d.path().join("b.json")));
    let sig = read_json(d.path().join("a.json"));
    assert_eq!(sig["fs"], 30.0);
    assert_eq!(sig["samples"].as_array().unwrap().len(), 300);

    ok(d.path(), &["synth", "--hr", "72", "--noise", "0.1", "--seed", "4", "--out", "c.json"]);
    assert_ne!(bytes(d.path().join("a.json")), bytes(d.path().join("c.json")));
}

#[test]
fn out_of_range_heart_rate_fails_with_the_range() {
    let d = tempfile::tempdir().unwrap();
    let out = doha(d.path(), &["synth", "--hr", "300", "--out", "x.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[42, 210]"));
    assert!(!d.path().join("x.json").exists());
    let manifest = read_json(d.path().join("x.json.synth.manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert!(manifest["error"].as_str().unwrap().contains("[42, 210]"));
}

#[test]
fn ssp_pipeline_recovers_the_rate() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--hr", "72", "--frames", "300", "--out", "sig.csv"]);
    let header = std::fs::read_to_string(d.path().join("sig.csv")).unwrap();
    assert!(header.starts_with("t,value\n"));
    ok(d.path(), &[
        "ssp", "--in", "sig.csv", "--fs", "30", "--out-map", "map.csv", "--out-seq", "seq.csv", "--out-hr", "hr.json",
    ]);
    let hr = read_json(d.path().join("hr.json"))["hr_bpm"].as_f64().unwrap();
    assert!((hr - 72.0).abs() <= 1.5, "hr {hr}");

    let map = std::fs::read_to_string(d.path().join("map.csv")).unwrap();
    let mut lines = map.lines();
    assert_eq!(lines.next().unwrap(), "# L_win=17 fs=30");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 300 - 17 + 1);
    assert_eq!(rows[0].split(',').count(), 284);
    let seq = std::fs::read_to_string(d.path().join("seq.csv")).unwrap();
    assert!(seq.starts_with("t_m,value\n"));
    assert_eq!(seq.lines().count(), 1 + 284);
}

#[test]
fn window_longer_than_signal_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--hr", "72", "--out", "sig.json"]);
    let out = doha(d.path(), &["ssp", "--in", "sig.json", "--lwin", "400", "--out-hr", "hr.json"]);
    assert!(!out.status.success());
    assert!(!d.path().join("hr.json").exists());
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn harmonize_worked_pairs() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "conflict.csv", "1,0\n-1,1\n");
    let out = ok(d.path(), &["harmonize", "--grads", "conflict.csv", "--seed", "9", "--out", "u.csv"]);
    assert!(out.contains("update=0.25,0.75"), "{out}");
    assert_eq!(std::fs::read_to_string(d.path().join("u.csv")).unwrap(), "0.25,0.75\n");

    write(d.path(), "orth.csv", "1,0\n0,1\n");
    let out = ok(d.path(), &["harmonize", "--grads", "orth.csv", "--out", "m.csv"]);
    assert!(out.contains("update=0.5,0.5"), "{out}");

    let plain = ok(d.path(), &["harmonize", "--grads", "conflict.csv", "--mode", "plain-mean"]);
    assert!(plain.contains("update=0,0.5"), "{plain}");
}

#[test]
fn harmonize_reports_sifted_instances_and_rolls_the_queue() {
    let d = tempfile::tempdir().unwrap();
    let queue: String = (1..=100).map(|k| format!("{k}\n")).collect();
    write(d.path(), "queue.csv", &queue);
    write(d.path(), "grads.csv", "10,0\n0,99\n");
    let out = ok(d.path(), &[
        "harmonize", "--grads", "grads.csv", "--queue", "queue.csv", "--t", "5",
        "--out-queue", "q2.csv", "--report", "rep.json",
    ]);
    assert!(out.contains("zeroed=1"), "{out}");
    let rep = read_json(d.path().join("rep.json"));
    assert_eq!(rep["kept"], serde_json::json!([true, false]));
    assert_eq!(rep["threshold"], 95.0);
    let q2: Vec<f64> = std::fs::read_to_string(d.path().join("q2.csv"))
        .unwrap()
        .lines()
        .filter_map(|l| l.parse().ok())
        .collect();
    assert_eq!(q2.len(), 102);
    assert_eq!(&q2[100..], &[10.0, 99.0]);
}

#[test]
fn binary_gradients_are_accepted() {
    let d = tempfile::tempdir().unwrap();
    let mut buf = b"DOHAGRAD".to_vec();
    buf.extend(2u32.to_le_bytes());
    buf.extend(2u32.to_le_bytes());
    for v in [1.0f64, 0.0, 0.0, 1.0] {
        buf.extend(v.to_le_bytes());
    }
    std::fs::write(d.path().join("g.bin"), buf).unwrap();
    let out = ok(d.path(), &["harmonize", "--grads", "g.bin"]);
    assert!(out.contains("update=0.5,0.5"), "{out}");
}

fn small_corpus(dir: &Path, name: &str, seed: &str) {
    ok(dir, &["corpus", "--out-dir", name, "--per-domain", "6", "--eval-per-domain", "4", "--seed", seed]);
}

#[test]
fn corpus_train_eval_report_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    small_corpus(p, "c1", "5");
    small_corpus(p, "c2", "5");
    for rel in ["train/lab/item_0000.clip", "train/office/item_0003.ssp.csv", "eval/outdoor/item_0001.json", "scenario.json"] {
        assert_eq!(bytes(p.join("c1").join(rel)), bytes(p.join("c2").join(rel)), "{rel}");
    }
    let sidecar = read_json(p.join("c1/train/lab/item_0000.json"));
    assert!(sidecar["true_hr"].is_number() && sidecar["delay"].is_number());
    assert_eq!(sidecar["domain"], "lab");
    let label = std::fs::read_to_string(p.join("c1/train/lab/item_0000.ssp.csv")).unwrap();
    assert!(label.starts_with("# L_win=17 fs=30"));
    assert!(p.join("c1/corpus.manifest.json").is_file());

    let modes = ["plain-mean", "ggh-only", "igh-only", "full-doha"];
    for mode in modes {
        for out in ["r1", "r2"] {
            ok(p, &["train", "--corpus-dir", "c1", "--mode", mode, "--epochs", "3", "--seed", "2", "--out-dir", out]);
        }
        let metrics = format!("metrics_{mode}.csv");
        assert_eq!(bytes(p.join("r1").join(&metrics)), bytes(p.join("r2").join(&metrics)), "{mode}");
        let model = format!("model_{mode}.json");
        assert_eq!(bytes(p.join("r1").join(&model)), bytes(p.join("r2").join(&model)), "{mode}");

        let text = std::fs::read_to_string(p.join("r1").join(&metrics)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,mode,train_loss,holdout_mae,holdout_rmse,holdout_r");
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[1].starts_with(&format!("1,{mode},")));

        let manifest = read_json(p.join("r1").join(format!("train_{mode}.manifest.json")));
        assert_eq!(manifest["status"], "ok");
        let phases: Vec<&str> = manifest["timings"].as_array().unwrap().iter().map(|t| t["phase"].as_str().unwrap()).collect();
        for e in ["epoch_1", "epoch_2", "epoch_3", "total"] {
            assert!(phases.contains(&e), "{phases:?}");
        }
    }

    let out = ok(p, &[
        "eval", "--model", "r1/model_full-doha.json", "--corpus-dir", "c1", "--domain", "outdoor",
        "--out", "pred.csv", "--out-metrics", "m.json",
    ]);
    let m: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(m["mae"].as_f64().unwrap().is_finite());
    assert_eq!(m["n"], 4);
    let pred = std::fs::read_to_string(p.join("pred.csv")).unwrap();
    assert!(pred.starts_with("domain,item,true_hr,pred_hr\n"));
    assert_eq!(pred.lines().count(), 5);

    ok(p, &[
        "report", "--metrics", "r1/metrics_plain-mean.csv", "r1/metrics_full-doha.csv", "--out-svg", "fig.svg",
        "--out-csv", "fig.csv",
    ]);
    let svg = std::fs::read_to_string(p.join("fig.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">plain-mean</text>") && svg.contains(">full-doha</text>"));
    assert!(std::fs::read_to_string(p.join("fig.csv")).unwrap().starts_with("series,epoch,holdout_mae\n"));
}

#[test]
fn missing_inputs_fail_and_still_leave_a_manifest() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let out = doha(p, &["train", "--corpus-dir", "nope", "--out-dir", "r"]);
    assert!(!out.status.success());
    let manifest = read_json(p.join("r/train_full-doha.manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert!(manifest["error"].as_str().unwrap().contains("nope"));

    let out = doha(p, &["report", "--out-svg", "fig.svg"]);
    assert!(!out.status.success());
    assert!(!p.join("fig.svg").exists());
    assert_eq!(read_json(p.join("fig.svg.report.manifest.json"))["status"], "error");

    write(p, "empty.csv", "epoch,mode,train_loss,holdout_mae,holdout_rmse,holdout_r\n");
    let out = doha(p, &["report", "--metrics", "empty.csv", "--out-svg", "fig.svg"]);
    assert!(!out.status.success());

    let out = doha(p, &["synth", "--hr", "72"]);
    assert!(!out.status.success());
    assert_eq!(read_json(p.join("synth.manifest.json"))["status"], "error");
}

#[test]
fn delay_sweep_writes_table_and_figure() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &[
        "delay-sweep", "--hr", "72", "--delays", "0,3,7,12", "--delay-mode", "truncation", "--out-csv", "s.csv",
        "--out-svg", "s.svg",
    ]);
    let csv = std::fs::read_to_string(d.path().join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "delay,max_interior_dev");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0,0"));
    assert!(std::fs::read_to_string(d.path().join("s.svg")).unwrap().contains("<polyline"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    write(p, "cfg.json", r#"{"seed": 1, "synth": {"hr": 60, "noise": 0.2, "out": "cfg_out.json"}}"#);
    ok(p, &["--config", "cfg.json", "synth"]);
    ok(p, &["synth", "--hr", "60", "--noise", "0.2", "--seed", "1", "--out", "flags.json"]);
    assert_eq!(bytes(p.join("cfg_out.json")), bytes(p.join("flags.json")));

    ok(p, &["--config", "cfg.json", "synth", "--hr", "90", "--out", "mixed.json"]);
    ok(p, &["synth", "--hr", "90", "--noise", "0.2", "--seed", "1", "--out", "direct.json"]);
    assert_eq!(bytes(p.join("mixed.json")), bytes(p.join("direct.json")));
    let manifest = read_json(p.join("mixed.json.synth.manifest.json"));
    assert_eq!(manifest["config"]["options"]["hr"], 90.0);
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn thread_cap_is_validated_and_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    small_corpus(p, "c", "1");
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_doha"))
            .args(["train", "--corpus-dir", "c", "--epochs", "2", "--out-dir", out])
            .current_dir(p)
            .env("DOHA_THREADS", threads)
            .output()
            .unwrap();
        o.status
    };
    assert!(run("1", "t1").success());
    assert!(run("3", "t3").success());
    assert_eq!(bytes(p.join("t1/model_full-doha.json")), bytes(p.join("t3/model_full-doha.json")));
    assert_eq!(run("zero", "bad").code(), Some(2));
}
