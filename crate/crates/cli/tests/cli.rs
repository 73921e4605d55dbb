mod common;

use common::{mrdqn, write_config, SMALL_RUN};
use serde_json::Value;

#[test]
fn train_writes_one_checkpoint_per_training_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let out = dir.path().join("run");
    let o = mrdqn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint_5.bin").exists());
    assert!(out.join("checkpoint_10.bin").exists());
    let bins = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("checkpoint_")
        })
        .count();
    assert_eq!(bins, 2);
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["episode"], 5);
    assert_eq!(first["test"]["range_id"], "test");

    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["train"]["gamma"], 0.95);
    assert_eq!(resolved["train"]["mode"], "LSP");

    let o = mrdqn(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 3 * 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("best by eval sharpe"));

    let o = mrdqn(&[
        "backtest",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--range",
        "eval",
        "--weights",
        "1,0,0,0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["range_id"], "eval");
    for key in [
        "total_reward",
        "total_profit",
        "sharpe",
        "long_exposure",
        "trades",
        "buy_and_hold_profit",
        "buy_and_hold_sharpe",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn backtest_with_missing_checkpoint_fails_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let missing = dir.path().join("nope.bin");
    let o = mrdqn(&[
        "backtest",
        "--config",
        &cfg,
        "--checkpoint",
        missing.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "MissingFile");
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synthetic = \"sine\"\nfee = -0.1\n");
    let o = mrdqn(&["train", "--config", &cfg]);
    assert!(!o.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "InvalidValue");

    let cfg = write_config(dir.path(), "synthetic = \"sine\"\nbogus = 1\n");
    let o = mrdqn(&["train", "--config", &cfg]);
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "UnknownKey");

    let o = mrdqn(&[
        "train",
        "--config",
        dir.path().join("absent.toml").to_str().unwrap(),
    ]);
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "MissingFile");
}

#[test]
fn walkforward_writes_fold_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL_RUN}n_folds = 2\nsplit = [0.8, 0.1, 0.1]\n"),
    );
    let out = dir.path().join("wf");
    let o = mrdqn(&[
        "walkforward",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--metric",
        "profit",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let folds: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("walkforward.json")).unwrap())
            .unwrap();
    let folds = folds.as_array().unwrap();
    assert_eq!(folds.len(), 2);
    assert_eq!(folds[0]["seed"], 3);
    assert_eq!(folds[1]["seed"], 4);
    assert!(out.join("fold_1.json").exists());
}
