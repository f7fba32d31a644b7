//! End-to-end CLI checks: every subcommand at micro scale, plus exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn detox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detox"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = detox(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn full_cli_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("sl.ckpt");

    // gen-data
    ok(&[
        "gen-data", "--out", &p(&data), "--train", "120", "--test", "60",
        "--classes", "4", "--size", "12", "--seed", "3",
    ]);
    assert!(data.join("train/images.bin").exists());
    assert!(data.join("test/meta.json").exists());

    // poison
    let poisoned = tmp.path().join("poisoned");
    let out = ok(&[
        "poison", "--dataset", &p(&data.join("train")), "--attack", "badnets",
        "--rate", "0.2", "--target", "0", "--label-mode", "poison",
        "--seed", "1", "--out", &p(&poisoned),
    ]);
    assert!(out.contains("poisoned 24 of 120"), "{out}");
    assert!(poisoned.join("trigger.json").exists());

    // train-sl
    let out = ok(&[
        "train-sl", "--dataset", &p(&poisoned), "--arch", "small_cnn",
        "--epochs", "2", "--lr", "0.01", "--momentum", "0.9",
        "--batch", "32", "--seed", "5", "--out", &p(&ckpt),
    ]);
    assert!(out.contains("trained small_cnn"), "{out}");
    assert!(ckpt.exists());
    assert!(tmp.path().join("sl.metrics.csv").exists());

    // filter
    let filter = tmp.path().join("filter.json");
    let out = ok(&[
        "filter", "--ckpt", &p(&ckpt), "--dataset", &p(&poisoned),
        "--gamma", "0.05", "--method", "entropy", "--out", &p(&filter),
    ]);
    assert!(out.contains("filtered 6 suspected poisoned / 6 trusted clean"), "{out}");
    assert!(out.contains("precision"), "{out}");

    // unlearn
    let au = tmp.path().join("au.ckpt");
    ok(&[
        "unlearn", "--ckpt", &p(&ckpt), "--dataset", &p(&poisoned),
        "--filter", &p(&filter), "--epochs", "2", "--lr", "0.01",
        "--out", &p(&au),
    ]);
    assert!(au.exists());

    // finetune
    let assft = tmp.path().join("assft.ckpt");
    ok(&[
        "finetune", "--ckpt", &p(&au), "--dataset", &p(&poisoned),
        "--filter", &p(&filter), "--epochs", "1", "--tau", "0.95",
        "--lambda-u", "1.0", "--batch", "8", "--ratio", "3",
        "--out", &p(&assft),
    ]);
    assert!(assft.exists());

    // evaluate (attack by name and by spec file)
    let report = tmp.path().join("report.json");
    let out = ok(&[
        "evaluate", "--ckpt", &p(&assft), "--test", &p(&data.join("test")),
        "--attack", "badnets", "--target", "0", "--out", &p(&report),
    ]);
    assert!(out.contains("CA") && out.contains("ASR"), "{out}");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["stage"], "assft");
    let out = ok(&[
        "evaluate", "--ckpt", &p(&assft), "--test", &p(&data.join("test")),
        "--attack", &p(&poisoned.join("trigger.json")), "--target", "0",
    ]);
    assert!(out.contains("ASR"), "{out}");
}

#[test]
fn pipeline_and_sweep_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "gen-data", "--out", &p(&data), "--train", "120", "--test", "60",
        "--classes", "4", "--size", "12", "--seed", "3",
    ]);

    let cfg = serde_json::json!({
        "train_dir": data.join("train"),
        "test_dir": data.join("test"),
        "out_dir": tmp.path().join("run"),
        "arch": "small_cnn",
        "stage_order": "sl-filter-au-assft",
        "seed": 7,
        "gamma": 0.05,
        "attack": {
            "trigger": "badnets",
            "rate_alpha": 0.2,
            "target_class": 0,
            "label_mode": "poison_label"
        },
        "train": {"epochs": 1, "batch_size": 32, "augmentation": "none"},
        "unlearn": {"epochs": 1},
        "ssl": {"epochs": 1, "batch_size": 8, "unlabeled_ratio": 3}
    });
    let cfg_path = tmp.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out = ok(&["pipeline", "--config", &p(&cfg_path)]);
    assert!(out.contains("stage     sl"), "{out}");
    assert!(out.contains("stage  assft"), "{out}");
    assert!(tmp.path().join("run/manifest.json").exists());

    // resume is a no-op on a completed run
    let out = ok(&["pipeline", "--config", &p(&cfg_path), "--resume"]);
    assert!(out.contains("manifest"), "{out}");

    let out = ok(&[
        "sweep", "--config", &p(&cfg_path), "--axis", "gamma", "--values", "0.05,0.1",
    ]);
    assert!(out.contains("value"), "{out}");
    assert!(tmp.path().join("run/sweep.csv").exists());
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let tmp = tempfile::tempdir().unwrap();

    // config error: bad stage order value in config
    let bad_cfg = tmp.path().join("bad.json");
    std::fs::write(&bad_cfg, "{\"not\": \"a config\"}").unwrap();
    let out = detox(&["pipeline", "--config", &p(&bad_cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // io/format error: evaluating a checkpoint that is not a checkpoint
    let fake = tmp.path().join("fake.ckpt");
    std::fs::write(&fake, b"junk").unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "gen-data", "--out", &p(&data), "--train", "20", "--test", "12",
        "--classes", "4", "--size", "12", "--seed", "0",
    ]);
    let out = detox(&["evaluate", "--ckpt", &p(&fake), "--test", &p(&data.join("test"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // config error: clean-label shortfall
    let out = detox(&[
        "poison", "--dataset", &p(&data.join("train")), "--attack", "badnets",
        "--rate", "0.9", "--target", "0", "--label-mode", "clean",
        "--seed", "1", "--out", &p(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
