//! End-to-end CLI behavior: files, determinism, and the error contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn betau() -> Command {
    Command::new(env!("CARGO_BIN_EXE_betau"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("betau-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const TINY: &str = "train_sequences = 6\n\
eval_sequences = 3\n\
frames_per_seq = 8\n\
scales = 14,7\n\
channels = 4\n\
latent_dim = 8\n\
epochs = 1\n\
lr = 0.001\n";

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let dir = tmpdir("gen");
    let cfg = write_cfg(&dir, "c.cfg", TINY);
    for out in ["a.jsonl", "b.jsonl"] {
        let st = betau()
            .args(["gen-data", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(dir.join(out))
            .status()
            .unwrap();
        assert!(st.success());
    }
    let a = std::fs::read(dir.join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.join("b.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tmpdir("seed");
    let cfg = write_cfg(&dir, "c.cfg", TINY);
    let run = |out: &str, seed: Option<&str>| {
        let mut cmd = betau();
        cmd.args(["gen-data", "--config"]).arg(&cfg).arg("--out").arg(dir.join(out));
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.status().unwrap().success());
    };
    run("a.jsonl", None);
    run("b.jsonl", Some("99"));
    let a = std::fs::read(dir.join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.join("b.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn unknown_config_key_fails_with_single_line_json_error() {
    let dir = tmpdir("badkey");
    let cfg = write_cfg(&dir, "c.cfg", "definitely_not_a_key = 1\n");
    let out = betau()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("d.jsonl"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.trim().lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    let parsed: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(parsed["error"], "config");
    assert!(parsed["message"].as_str().unwrap().contains("definitely_not_a_key"));
}

#[test]
fn stage_two_requires_init() {
    let dir = tmpdir("noinit");
    let cfg = write_cfg(&dir, "c.cfg", TINY);
    let data = dir.join("d.jsonl");
    assert!(betau()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let out = betau()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .args(["--stage", "2", "--out"])
        .arg(dir.join("m.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("--init"), "{stderr}");
}

#[test]
fn full_pipeline_round_trip() {
    let dir = tmpdir("pipe");
    let cfg = write_cfg(&dir, "c.cfg", TINY);
    let data = dir.join("d.jsonl");
    let m1 = dir.join("m1.txt");
    let m2 = dir.join("m2.txt");
    let report = dir.join("eval.txt");
    assert!(betau()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    assert!(betau()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .args(["--stage", "1", "--out"])
        .arg(&m1)
        .arg("--log")
        .arg(dir.join("l1.txt"))
        .status()
        .unwrap()
        .success());
    assert!(betau()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .args(["--stage", "2", "--init"])
        .arg(&m1)
        .arg("--out")
        .arg(&m2)
        .status()
        .unwrap()
        .success());
    assert!(betau()
        .args(["eval", "--data"])
        .arg(&data)
        .arg("--model")
        .arg(&m2)
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap()
        .success());
    // text report + JSON mirror, and the mirror parses with the schema tag
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("average F1"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval.txt.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], "eval-v1");
    assert_eq!(json["per_au"].as_array().unwrap().len(), 8);
    // log mirror exists too
    assert!(dir.join("l1.txt.json").exists());
}

#[test]
fn stratify_reports_bins_and_warnings() {
    let dir = tmpdir("strat");
    let cfg = write_cfg(&dir, "c.cfg", TINY);
    let data = dir.join("d.jsonl");
    let m1 = dir.join("m1.txt");
    assert!(betau()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    assert!(betau()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .args(["--stage", "1", "--out"])
        .arg(&m1)
        .status()
        .unwrap()
        .success());
    // An embedding-stage model still evaluates (untrained heads), so the
    // stratification contract can be exercised cheaply.
    let report = dir.join("s.txt");
    assert!(betau()
        .args(["stratify", "--data"])
        .arg(&data)
        .arg("--model")
        .arg(&m1)
        .args(["--bins", "3", "--report"])
        .arg(&report)
        .status()
        .unwrap()
        .success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("s.txt.json")).unwrap()).unwrap();
    assert_eq!(json["bins"].as_array().unwrap().len(), 3);
    let sizes: Vec<i64> = json["bins"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["frames"].as_i64().unwrap())
        .collect();
    let max = sizes.iter().max().unwrap();
    let min = sizes.iter().min().unwrap();
    assert!(max - min <= 1);
}

#[test]
fn verify_oracle_rejects_unknown_grid() {
    let dir = tmpdir("grid");
    let out = betau()
        .args(["verify-oracle", "--grid", "huge", "--report"])
        .arg(dir.join("r.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown grid"));
}
