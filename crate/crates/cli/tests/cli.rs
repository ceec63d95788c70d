use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use decoyforge::synthetic::{World, WorldConfig, WorldFiles};
use serde_json::Value;
use sha2::{Digest, Sha256};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    files: WorldFiles,
}

fn fixture(images: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let world = World::build(&WorldConfig::with_images(images, 4)).unwrap();
    let files = world.write_to(&root).unwrap();
    Fixture { _dir: dir, root, files }
}

impl Fixture {
    fn cmd(&self, out: &str) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_decoyforge"));
        cmd.arg("--out")
            .arg(self.root.join(out))
            .arg("--corpus")
            .arg(&self.files.corpus)
            .arg("--embeddings")
            .arg(&self.files.embeddings)
            .arg("--taxonomy")
            .arg(&self.files.taxonomy)
            .arg("--features")
            .arg(&self.files.features)
            .env_remove("DECOYFORGE_THREADS");
        cmd
    }

    fn out(&self, out: &str) -> PathBuf {
        self.root.join(out)
    }
}

fn run(cmd: &mut Command) -> Output {
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_record(output: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON record ({e}): {stderr}"))
}

const TRAIN_FLAGS: &[&str] = &["--hidden", "16", "--max-iters", "60", "--dropout", "0", "--lr", "0.05"];

#[test]
fn gen_writes_candidates_report_and_manifest() {
    let fx = fixture(30);
    run(fx.cmd("run").args(["gen", "--mode", "iou+qou", "--seed", "3"]));
    let dir = fx.out("run").join("gen").join("iou_qou");
    let lines = std::fs::read_to_string(dir.join("candidates.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 30 * 6);
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["candidates"].as_array().unwrap().len(), 7);
        assert_eq!(v["provenance"].as_array().unwrap().len(), 7);
    }
    let report = read_json(&dir.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["records"], 180);
    assert_eq!(report["config"]["seed"], 3);
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    let corpus_digest = hex::encode(Sha256::digest(std::fs::read(&fx.files.corpus).unwrap()));
    assert_eq!(manifest["inputs"]["corpus"]["sha256"], corpus_digest);
    let out_digest = hex::encode(Sha256::digest(lines.as_bytes()));
    assert_eq!(manifest["outputs"]["candidates"]["sha256"], out_digest);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_and_train_are_byte_identical_across_runs_and_thread_caps() {
    let fx = fixture(30);
    for (out, threads) in [("a", None), ("b", Some("1"))] {
        let mut gen = fx.cmd(out);
        gen.args(["gen", "--mode", "all", "--seed", "8"]);
        let mut train = fx.cmd(out);
        train.args(["train", "--mode", "IQA", "--decoy-set", "all", "--seed", "8"]).args(TRAIN_FLAGS);
        if let Some(n) = threads {
            gen.env("DECOYFORGE_THREADS", n);
            train.env("DECOYFORGE_THREADS", n);
        }
        run(&mut gen);
        run(&mut train);
    }
    for rel in ["gen/all/candidates.jsonl", "gen/all/report.json", "train/IQA_all/model.dfmp", "train/IQA_all/log.jsonl"] {
        let a = std::fs::read(fx.out("a").join(rel)).unwrap();
        let b = std::fs::read(fx.out("b").join(rel)).unwrap();
        assert!(!a.is_empty(), "{rel} is empty");
        assert!(a == b, "{rel} differs between runs");
    }
}

#[test]
fn invalid_threshold_is_a_config_error_naming_the_field() {
    let fx = fixture(5);
    let output = fx.cmd("run").args(["gen", "--threshold", "1.5"]).output().unwrap();
    assert!(!output.status.success());
    let record = error_record(&output);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["field"], "threshold");
    assert_eq!(record["schema_version"], 1);
    assert!(!fx.out("run").join("gen").exists());
}

#[test]
fn missing_input_is_reported() {
    let fx = fixture(5);
    let output = fx
        .cmd("run")
        .args(["--corpus", "/nonexistent/corpus.jsonl", "validate"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let record = error_record(&output);
    assert_eq!(record["error"]["field"], "paths.corpus");
}

#[test]
fn bad_thread_cap_is_rejected() {
    let fx = fixture(5);
    let output = fx.cmd("run").arg("validate").env("DECOYFORGE_THREADS", "zero").output().unwrap();
    assert!(!output.status.success());
    assert_eq!(error_record(&output)["error"]["field"], "DECOYFORGE_THREADS");
}

#[test]
fn flags_override_the_config_file() {
    let fx = fixture(10);
    let config = fx.root.join("pipeline.toml");
    std::fs::write(&config, "seed = 21\n[gen]\nk = 2\ntopn = 50\n").unwrap();
    run(fx.cmd("run").arg("--config").arg(&config).args(["gen", "--mode", "qou", "--k", "1"]));
    let report = read_json(&fx.out("run").join("gen/qou/report.json"));
    assert_eq!(report["config"]["k"], 1);
    assert_eq!(report["config"]["topn"], 50);
    assert_eq!(report["config"]["seed"], 21);
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(fx.out("run").join("gen/qou/candidates.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(first["candidates"].as_array().unwrap().len(), 2);

    std::fs::write(&config, "[gen]\nwup_threshold = 1.5\n").unwrap();
    let output = fx.cmd("run").arg("--config").arg(&config).arg("gen").output().unwrap();
    assert_eq!(error_record(&output)["error"]["field"], "threshold");
}

#[test]
fn validate_flags_violations() {
    let fx = fixture(5);
    run(fx.cmd("run").arg("validate"));
    let report = read_json(&fx.out("run").join("validate/report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);

    let bad = fx.root.join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"id\":\"x\",\"image_id\":\"img00000\",\"split\":\"train\",\"question\":\"q\",\"target\":\"Red\",\"decoys\":[\"red \",\"blue\"]}\n",
    )
    .unwrap();
    let output = fx.cmd("bad").arg("--corpus").arg(&bad).arg("validate").output().unwrap();
    assert!(!output.status.success());
    assert_eq!(error_record(&output)["error"]["kind"], "validation");
    let report = read_json(&fx.out("bad").join("validate/report.json"));
    assert_eq!(report["violations"][0]["kind"], "decoy-equals-target");
}

#[test]
fn ingest_converts_v7w_layout() {
    let fx = fixture(2);
    let v7w = fx.root.join("v7w.json");
    std::fs::write(
        &v7w,
        r#"{"images":[{"image_id":7,"split":"val","qa_pairs":[
            {"qa_id":70,"question":"What color is the cab?","answer":"Yellow.","multiple_choices":["Red.","Blue.","Green."],"type":"what"},
            {"qa_id":71,"question":"Is it raining?","answer":"Yes.","multiple_choices":["No.","Maybe.","Never."],"type":"what"}]}]}"#,
    )
    .unwrap();
    run(fx.cmd("run").arg("--corpus").arg(&v7w).args(["--format", "v7w-style", "ingest", "--drop-yes-no"]));
    let summary = read_json(&fx.out("run").join("ingest/summary.json"));
    assert_eq!(summary["records"], 1);
    assert_eq!(summary["dropped_yes_no"], 1);
    assert_eq!(summary["splits"]["val"], 1);
    let line = std::fs::read_to_string(fx.out("run").join("ingest/corpus.jsonl")).unwrap();
    let v: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["id"], "70");
    assert_eq!(v["decoys"].as_array().unwrap().len(), 3);
}

#[test]
fn audit_reports_rule_accuracy_per_decoy_set() {
    let fx = fixture(40);
    run(fx.cmd("run").args(["gen", "--mode", "iou+qou"]));
    run(fx.cmd("run").arg("audit"));
    let report = read_json(&fx.out("run").join("audit/report.json"));
    assert_eq!(report["schema_version"], 1);
    let orig = report["sets"]["orig"]["rule_accuracy"]["test"].as_f64().unwrap();
    let remediated = report["sets"]["iou+qou"]["rule_accuracy"]["test"].as_f64().unwrap();
    assert!(orig > 0.95, "orig {orig}");
    assert!(remediated < 0.5, "remediated {remediated}");
    assert!(report["sets"]["orig"]["most_biased"].as_array().unwrap().len() <= 20);
}

#[test]
fn report_aggregates_four_trainings_into_a_grid() {
    let fx = fixture(30);
    run(fx.cmd("run").args(["gen", "--mode", "iou+qou"]));
    for mode in ["A", "QA", "IA", "IQA"] {
        run(fx.cmd("run").args(["train", "--mode", mode, "--decoy-set", "iou+qou"]).args(TRAIN_FLAGS));
        run(fx.cmd("run").args(["eval", "--mode", mode, "--decoy-set", "iou+qou", "--metric", "plain"]));
    }
    let output = run(fx.cmd("run").arg("report"));
    let grid = read_json(&fx.out("run").join("report/report.json"));
    assert_eq!(grid["schema_version"], 1);
    assert_eq!(grid["columns"], serde_json::json!(["iou+qou"]));
    let rows = grid["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["Random", "MLP-A", "MLP-QA", "MLP-IA", "MLP-IQA"]);
    for row in rows {
        let v = row["cells"][0].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!((rows[0]["cells"][0].as_f64().unwrap() - 1.0 / 7.0).abs() < 1e-12);
    let text = std::fs::read_to_string(fx.out("run").join("report/report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&output.stdout), text);
    let widths: Vec<usize> = text.lines().map(str::len).collect();
    assert!(widths.iter().all(|&w| w == widths[0]));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn eval_without_training_names_the_missing_checkpoint() {
    let fx = fixture(5);
    let output = fx.cmd("run").args(["eval", "--mode", "A", "--decoy-set", "orig"]).output().unwrap();
    assert!(!output.status.success());
    assert_eq!(error_record(&output)["error"]["field"], "init");
}

#[test]
fn vqa_metric_without_human_answers_fails() {
    let fx = fixture(10);
    run(fx.cmd("run").args(["train", "--mode", "A", "--decoy-set", "orig"]).args(TRAIN_FLAGS));
    let output = fx
        .cmd("run")
        .args(["eval", "--mode", "A", "--decoy-set", "orig", "--metric", "vqa-clipped"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let record = error_record(&output);
    assert_eq!(record["error"]["kind"], "data");
    assert!(record["error"]["message"].as_str().unwrap().contains("human answers"));
}

#[test]
fn warm_start_continues_from_a_checkpoint() {
    let fx = fixture(10);
    run(fx.cmd("run").args(["train", "--mode", "QA", "--decoy-set", "orig"]).args(TRAIN_FLAGS));
    let ckpt = fx.out("run").join("train/QA_orig/model.dfmp");
    let saved = fx.root.join("warm.dfmp");
    std::fs::copy(&ckpt, &saved).unwrap();
    run(fx
        .cmd("run")
        .args(["train", "--mode", "QA", "--decoy-set", "orig", "--init"])
        .arg(&saved)
        .args(["--max-iters", "0"]));
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&saved).unwrap());
    let output = fx
        .cmd("run")
        .args(["train", "--mode", "A", "--decoy-set", "orig", "--init"])
        .arg(&saved)
        .output()
        .unwrap();
    assert!(!output.status.success());
}
