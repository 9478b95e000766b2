use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use belief_core::memory::{save_bank, MemoryBank};
use belief_core::model::{Model, ModelConfig};
use serde_json::Value;

fn belief(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_belief"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = belief(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn gen(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--seed", "7", "--out", name, "--quiet"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn gen_data_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "a.jsonl", &["--sessions", "100"]);
    gen(d.path(), "b.jsonl", &["--sessions", "100"]);
    let a = fs::read(d.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 2000);
    let echo = fs::read_to_string(d.path().join("a.jsonl.config")).unwrap();
    assert!(echo.contains("seed = 7\n") && echo.contains("sessions = 100\n"));
}

#[test]
fn gen_data_defaults_to_3000_sessions() {
    let d = tempfile::tempdir().unwrap();
    let stdout = ok(d.path(), &["gen-data", "--out", "d.jsonl"]);
    assert!(stdout.starts_with("3000 sessions, 60000 steps"), "{stdout}");
    let text = fs::read_to_string(d.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 60000);
}

#[test]
fn gen_data_splits_by_session() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "100", "--set", "split=0.8,0.1,0.1"]);
    for (part, n) in [("train", 80), ("validation", 10), ("test", 10)] {
        let text = fs::read_to_string(d.path().join(format!("d.{part}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), n * 20, "{part}");
    }
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&belief(d.path(), &["gen-data", "--sessions", "0"])), 2);
    assert_eq!(code(&belief(d.path(), &["gen-data", "--set", "bogus=1"])), 2);
    fs::write(d.path().join("c.txt"), "noise = loud\n").unwrap();
    assert_eq!(code(&belief(d.path(), &["gen-data", "--config", "c.txt"])), 2);
    assert_eq!(code(&belief(d.path(), &["no-such-command"])), 2);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.txt"), "# small run\nsessions = 3\nsteps = 4\nseed = 1\n").unwrap();
    ok(d.path(), &["gen-data", "--config", "c.txt", "--seed", "2", "--out", "d.jsonl", "--quiet"]);
    let echo = fs::read_to_string(d.path().join("d.jsonl.config")).unwrap();
    assert!(echo.contains("seed = 2\n") && echo.contains("sessions = 3\n") && echo.contains("steps = 4\n"));
    assert!(echo.contains("noise = 0.1\n"));
    assert_eq!(fs::read_to_string(d.path().join("d.jsonl")).unwrap().lines().count(), 12);
}

#[test]
fn zero_epochs_keep_the_initialization() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "5"]);
    ok(d.path(), &["train", "--data", "d.jsonl", "--epochs", "0", "--seed", "3", "--out", "run", "--quiet"]);
    let saved = fs::read(d.path().join("run/model.bmp")).unwrap();
    let init = Model::new(ModelConfig::default(), 3, 3).unwrap();
    assert_eq!(saved, init.to_checkpoint_bytes());
    assert_eq!(fs::read_to_string(d.path().join("run/metrics.jsonl")).unwrap(), "");
    assert!(fs::read_to_string(d.path().join("run/config.txt")).unwrap().contains("epochs = 0\n"));
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "40", "--set", "split=0.75,0,0.25"]);
    for run in ["r1", "r2"] {
        ok(d.path(), &["train", "--data", "d.train.jsonl", "--epochs", "2", "--out", run, "--quiet"]);
        ok(
            d.path(),
            &["eval", "--data", "d.test.jsonl", "--checkpoint", &format!("{run}/model.bmp"), "--out", &format!("{run}.json"), "--quiet"],
        );
    }
    for file in ["r1/metrics.jsonl", "r1/model.bmp", "r1/bank.bmb", "r1.json"] {
        let other = file.replace("r1", "r2");
        let a = fs::read(d.path().join(file)).unwrap();
        let b = fs::read(d.path().join(other)).unwrap();
        if file.ends_with(".json") {
            // reports name their checkpoint path
            let strip = |x: &[u8]| {
                let mut v: Value = serde_json::from_slice(x).unwrap();
                v.as_object_mut().unwrap().remove("checkpoint");
                v
            };
            assert_eq!(strip(&a), strip(&b));
        } else {
            assert_eq!(a, b, "{file}");
        }
    }
    let metrics = fs::read_to_string(d.path().join("r1/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in [
        "checkpoint",
        "sessions_seen",
        "mean_reward",
        "accuracy_overall",
        "accuracy_context",
        "accuracy_observable",
        "ce_loss",
        "ppo_objective",
        "value_loss",
        "entropy",
    ] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let report: Value = serde_json::from_slice(&fs::read(d.path().join("r1.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["epochs"], "15");
    assert_eq!(report["confusion"].as_array().unwrap().len(), 4);
    assert!(report["per_session_accuracy"]["median"].is_number());
}

#[test]
fn numeric_blowup_exits_3() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "30"]);
    let out = belief(
        d.path(),
        &["train", "--data", "d.jsonl", "--epochs", "1", "--set", "lr=1e300", "--set", "rollout_batch=16", "--out", "run", "--quiet"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numeric"));
}

#[test]
fn eval_reports() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "300"]);
    ok(d.path(), &["train", "--data", "d.jsonl", "--epochs", "0", "--out", "run", "--quiet"]);

    ok(d.path(), &["eval", "--data", "d.jsonl", "--checkpoint", "run/model.bmp", "--oracle", "--out", "o.json", "--quiet"]);
    let oracle: Value = serde_json::from_slice(&fs::read(d.path().join("o.json")).unwrap()).unwrap();
    assert_eq!(oracle["accuracy_overall"], 1.0);

    let stdout = ok(d.path(), &["eval", "--data", "d.jsonl", "--checkpoint", "run/model.bmp", "--sampled"]);
    let sampled: Value = serde_json::from_str(&stdout).unwrap();
    assert!(sampled["questions"].as_u64().unwrap() >= 5000);
    let acc = sampled["accuracy_overall"].as_f64().unwrap();
    assert!((acc - 0.25).abs() < 0.02, "{acc}");
    assert_eq!(sampled["config"]["inference"], "sampled");

    let a = ok(d.path(), &["eval", "--data", "d.jsonl", "--checkpoint", "run/model.bmp"]);
    let b = ok(d.path(), &["eval", "--data", "d.jsonl", "--checkpoint", "run/model.bmp"]);
    assert_eq!(a, b);
}

#[test]
fn dimension_mismatches_exit_2() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "d.jsonl", &["--sessions", "3"]);
    ok(d.path(), &["train", "--data", "d.jsonl", "--epochs", "0", "--set", "d_h=8", "--out", "run", "--quiet"]);
    let out = belief(d.path(), &["eval", "--data", "d.jsonl", "--checkpoint", "run/model.bmp"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    gen(d.path(), "wide.jsonl", &["--sessions", "3", "--set", "d_v=50"]);
    ok(d.path(), &["train", "--data", "d.jsonl", "--epochs", "0", "--out", "base", "--quiet"]);
    let out = belief(d.path(), &["eval", "--data", "wide.jsonl", "--checkpoint", "base/model.bmp"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(d.path().join("bad.jsonl"), "{\"session_id\": 0,\n").unwrap();
    let out = belief(d.path(), &["train", "--data", "bad.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn missing_files_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&belief(d.path(), &["train", "--data", "absent.jsonl"])), 1);
}

#[test]
fn inspect_memory() {
    let d = tempfile::tempdir().unwrap();
    let empty = MemoryBank::new(3, 2, 16, 0).unwrap();
    save_bank(&empty, d.path().join("empty.bmb")).unwrap();
    let out = ok(d.path(), &["inspect-memory", "--bank", "empty.bmb"]);
    assert!(out.starts_with("0 entries"), "{out}");
    assert!(out.contains("cold start"));

    let mut one = MemoryBank::new(3, 2, 16, 0).unwrap();
    one.insert(&[0.6, 0.0, 0.8], &[1.5, -2.0], 2, 1.0).unwrap();
    save_bank(&one, d.path().join("one.bmb")).unwrap();
    let out = ok(d.path(), &["inspect-memory", "--bank", "one.bmb", "--query", "0.6,0,0.8"]);
    assert!(out.starts_with("1 entries"));
    assert!(out.contains("#0      similarity 1.000000 weight 1.000000"), "{out}");

    let mut many = MemoryBank::new(2, 1, 16, 0).unwrap();
    for i in 0..4 {
        many.insert(&[1.0, i as f64], &[i as f64], i, 0.0).unwrap();
    }
    save_bank(&many, d.path().join("many.bmb")).unwrap();
    let out = ok(d.path(), &["inspect-memory", "--bank", "many.bmb"]);
    for e in many.entries() {
        let line = format!(
            "#{:<6} action {} reward {} key {:?} value {:?}",
            e.insert_index, e.action, e.reward, e.key, e.value
        );
        assert!(out.contains(&line), "{line}");
    }

    fs::write(d.path().join("junk.bmb"), b"nope").unwrap();
    assert_eq!(code(&belief(d.path(), &["inspect-memory", "--bank", "junk.bmb"])), 2);
}

#[test]
fn verify_gates() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["verify"]);
    for gate in ["retrieval", "belief", "softmax", "gradient", "ppo", "persistence"] {
        assert!(out.lines().any(|l| l.starts_with(gate) && l.contains("pass")), "{gate}: {out}");
    }

    let out = ok(d.path(), &["verify", "--gate", "retrieval"]);
    assert_eq!(out.lines().count(), 2, "{out}");

    let out = belief(d.path(), &["verify", "--inject-fault", "flip-gradient-sign"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("first failing gate: gradient"));

    assert_eq!(code(&belief(d.path(), &["verify", "--gate", "nonsense"])), 2);
}
