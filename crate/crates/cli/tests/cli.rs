//! End-to-end runs of the `selfcf` binary against toy datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use selfcf_core::data::write_canonical;
use selfcf_core::synth::synthetic_blocks;

fn selfcf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfcf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

/// 30 users, each with 10 distinct items out of 40; the 8:1:1 split leaves
/// every user one validation and one test item.
fn toy_raw(dir: &Path) {
    let mut text = String::new();
    for u in 0..30 {
        for j in 0..10 {
            let item = (u * 7 + j * 3) % 40;
            text.push_str(&format!("u{u}\ti{item}\t{j}\n"));
        }
    }
    fs::write(dir.join("raw.tsv"), text).unwrap();
}

fn base_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let content = format!(
        r#"
[dataset]
raw = "raw.tsv"
fields = "user,item,time"
prepared = "prep"

[model]
framework = "selfcf_ed"
layers = 1
embedding_dim = 8

[train]
batch_size = 64
max_epochs = 3
patience = 3

[eval]
k = [10, 20]

[output]
dir = "out"
{extra}
"#
    );
    fs::write(&path, content).unwrap();
    path
}

#[test]
fn prepare_reports_hand_computed_sparsity() {
    let tmp = tempfile::tempdir().unwrap();
    // 2 users, 3 items, 4 interactions: sparsity 1 - 4/6
    fs::write(
        tmp.path().join("raw.tsv"),
        "a\tx\t0\na\ty\t1\na\tz\t2\nb\tx\t0\n",
    )
    .unwrap();
    base_config(tmp.path(), "");
    let out = selfcf(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert_ok(&out);
    assert!(
        stdout(&out).contains("2 users, 3 items, 4 interactions, sparsity 33.3333%"),
        "stdout: {}",
        stdout(&out)
    );

    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("prep/stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["users"], 2);
    assert_eq!(stats["items"], 3);
    assert_eq!(stats["interactions"], 4);
}

#[test]
fn empty_raw_file_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("raw.tsv"), "").unwrap();
    base_config(tmp.path(), "");
    let out = selfcf(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(!stderr(&out).is_empty());
}

#[test]
fn train_writes_the_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_ok(&selfcf(tmp.path(), &["train", "--config", "run.toml"]));

    for name in [
        "checkpoint.bin",
        "train_log.jsonl",
        "report.json",
        "report.csv",
        "config.toml",
        "manifest.json",
    ] {
        assert!(tmp.path().join("out").join(name).exists(), "missing {name}");
    }

    let log = fs::read_to_string(tmp.path().join("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["epoch"].is_u64());
        assert!(rec["val_recall@20"].is_f64());
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    // 70 rows of width 8 plus the 8x8 + 8 linear head
    assert_eq!(manifest["parameter_count"], 70 * 8 + 72);
}

#[test]
fn incompatible_framework_fails_before_writing_anything() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    let out = selfcf(
        tmp.path(),
        &[
            "train",
            "--config",
            "run.toml",
            "--set",
            "model.framework=selfcf_ep",
            "--set",
            "model.backbone=mf",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("lightgcn"), "stderr: {}", stderr(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn same_config_and_seed_reproduce_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_ok(&selfcf(
        tmp.path(),
        &["train", "--config", "run.toml", "--out", "a", "--seed", "5"],
    ));
    assert_ok(&selfcf(
        tmp.path(),
        &["train", "--config", "run.toml", "--out", "b", "--seed", "5"],
    ));

    let read = |run: &str, name: &str| fs::read(tmp.path().join(run).join(name)).unwrap();
    assert_eq!(read("a", "checkpoint.bin"), read("b", "checkpoint.bin"));
    assert_eq!(read("a", "report.json"), read("b", "report.json"));
}

#[test]
fn bpr_on_synthetic_blocks_yields_unit_interval_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = synthetic_blocks(40, 60, 4, 10, 0.05, 1).unwrap();
    write_canonical(&dataset, &tmp.path().join("prep")).unwrap();
    base_config(tmp.path(), "");
    assert_ok(&selfcf(
        tmp.path(),
        &[
            "train",
            "--config",
            "run.toml",
            "--set",
            "model.framework=supervised_bpr",
        ],
    ));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/report.json")).unwrap())
            .unwrap();
    for metric in ["recall", "ndcg"] {
        for (_, v) in report[metric].as_object().unwrap() {
            let v = v.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{metric} = {v}");
        }
    }
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(
        tmp.path(),
        "[sweep]\naxis = \"dropout\"\nvalues = [0.05, 0.1, 0.15]\n",
    );
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_ok(&selfcf(
        tmp.path(),
        &["sweep", "--config", "run.toml", "--set", "train.max_epochs=1"],
    ));

    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "axis,value,recall@10,recall@20,ndcg@10,ndcg@20,best_epoch,val_recall"
    );
    assert_eq!(lines.len(), 4);
    for (line, v) in lines[1..].iter().zip(["0.05", "0.1", "0.15"]) {
        assert!(line.starts_with(&format!("dropout,{v},")), "{line}");
    }
    // each grid point is a complete reproducible run
    assert!(tmp.path().join("out/dropout_0.1/checkpoint.bin").exists());
    assert!(tmp.path().join("out/dropout_0.1/manifest.json").exists());
}

#[test]
fn unknown_sweep_axis_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "[sweep]\naxis = \"temperature\"\nvalues = [0.1]\n");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    let out = selfcf(tmp.path(), &["sweep", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown sweep axis"));
}

#[test]
fn ablate_emits_the_fixed_variant_rows_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    // zero-epoch smoke: untrained metrics, but all rows present
    assert_ok(&selfcf(
        tmp.path(),
        &["ablate", "--config", "run.toml", "--set", "train.max_epochs=0"],
    ));

    let csv = fs::read_to_string(tmp.path().join("out/ablation.csv")).unwrap();
    let variants: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        variants,
        [
            "baseline",
            "no_predictor",
            "fixed_random_predictor",
            "2layer_predictor",
            "cross_entropy",
            "no_sg_with_pred",
            "no_sg_no_pred",
        ]
    );
    assert!(tmp.path().join("out/cross_entropy/report.json").exists());
}

#[test]
fn set_overrides_reach_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_ok(&selfcf(
        tmp.path(),
        &[
            "train",
            "--config",
            "run.toml",
            "--set",
            "train.seed=7",
            "--set",
            "train.max_epochs=1",
        ],
    ));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 7);
    let log = fs::read_to_string(tmp.path().join("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn unknown_set_key_is_rejected_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    let out = selfcf(
        tmp.path(),
        &["prepare", "--config", "run.toml", "--set", "train.momentum=0.9"],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown config key"));
}

#[test]
fn evaluate_reuses_a_trained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    toy_raw(tmp.path());
    base_config(tmp.path(), "");
    assert_ok(&selfcf(tmp.path(), &["prepare", "--config", "run.toml"]));
    assert_ok(&selfcf(tmp.path(), &["train", "--config", "run.toml"]));
    assert_ok(&selfcf(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--out",
            "evalout",
            "--set",
            "eval.checkpoint=out/checkpoint.bin",
        ],
    ));

    let trained: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/report.json")).unwrap())
            .unwrap();
    let evaluated: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("evalout/report.json")).unwrap())
            .unwrap();
    assert_eq!(trained["recall"], evaluated["recall"]);
    assert_eq!(trained["ndcg"], evaluated["ndcg"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("evalout/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "evaluate");
}
