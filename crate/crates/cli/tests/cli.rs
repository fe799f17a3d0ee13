//! End-to-end runs of the `semdet` binary: subcommand wiring, exit codes,
//! and artifact round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semdet::hierarchy::{build_expanded_ffpp_graph, save_graph};
use semdet::inference::{all_marginals, ScoreVector};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_semdet")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn write_graph(dir: &Path) -> PathBuf {
    let path = dir.join("graph.json");
    save_graph(&build_expanded_ffpp_graph(), &path).unwrap();
    path
}

fn write_small_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "feature_dim": 16,
        "blocks": {
            "identity": {"start": 0, "len": 6},
            "lip": {"start": 6, "len": 2},
            "mouth": {"start": 8, "len": 2}
        },
        "manipulations": [
            {"name": "swap", "nodes": ["identity", "lip", "mouth"], "offset": 1.5, "noise": 0.3}
        ],
        "train_manipulations": ["swap"],
        "test_manipulations": ["swap"],
        "train_real": 40,
        "train_fake_per_manipulation": 40,
        "test_real": 16,
        "test_fake_per_manipulation": 16,
        "seed": 9
    });
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

fn write_train_config(dir: &Path) -> PathBuf {
    let config = serde_json::json!({
        "seed": 5,
        "embedding": {"input_dim": 16, "hidden": [8], "embed_dim": 8},
        "train": {"batch_size": 4, "epochs": 2}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn version_prints_format_versions() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("graph format version"));
    assert!(text.contains("checkpoint format version"));
    assert!(text.contains("manifest format version"));
}

#[test]
fn unknown_subcommand_exits_1() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_subcommand_exits_1() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_matches_library_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let scores = "[1.0, 0.5, -0.5, 0, 0, 0, 0, 0, 0, 0]";
    let out = run(&[
        "oracle",
        "--graph",
        graph_path.to_str().unwrap(),
        "--scores",
        scores,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let printed: Vec<f64> = serde_json::from_value(parsed["marginals"].clone()).unwrap();

    let graph = build_expanded_ffpp_graph();
    let mut values = vec![0.0; 10];
    values[0] = 1.0;
    values[1] = 0.5;
    values[2] = -0.5;
    let expected = all_marginals(&graph, &ScoreVector::new(values).unwrap()).unwrap();
    for i in 0..10 {
        assert!((printed[i] - expected.get(i)).abs() < 1e-12);
    }
    assert!(parsed["by_name"]["face"].as_f64().is_some());
}

#[test]
fn oracle_rejects_bad_scores_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let out = run(&[
        "oracle",
        "--graph",
        graph_path.to_str().unwrap(),
        "--scores",
        "not json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_exits_0() {
    let out = run(&["gradcheck", "--seed", "7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.matches("PASS").count(), 4, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn synth_train_eval_explain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let spec_path = write_small_spec(dir.path());
    let config_path = write_train_config(dir.path());
    let data_dir = dir.path().join("data");
    let run_dir = dir.path().join("run");

    let out = run(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data_dir.join("train.jsonl").exists());
    assert!(data_dir.join("test.jsonl").exists());

    let out = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--data",
        data_dir.join("train.jsonl").to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let checkpoint = run_dir.join("checkpoint.json");
    assert!(checkpoint.exists());
    assert!(run_dir.join("trainlog.jsonl").exists());

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--data",
        data_dir.join("test.jsonl").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(report["root_auc"].as_f64().is_some());
    assert_eq!(report["per_node"].as_array().unwrap().len(), 10);

    // explain on a JSON feature vector
    let features = serde_json::json!({"features": vec![0.0f64; 16]});
    let input_path = dir.path().join("probe.json");
    std::fs::write(&input_path, features.to_string()).unwrap();
    let out = run(&[
        "explain",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--input",
        input_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("The face image is"));
}

#[test]
fn train_is_deterministic_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let spec_path = write_small_spec(dir.path());
    let config_path = write_train_config(dir.path());
    let data_dir = dir.path().join("data");
    assert!(run(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let mut artifacts = Vec::new();
    for k in 0..2 {
        let run_dir = dir.path().join(format!("run{k}"));
        assert!(run(&[
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--data",
            data_dir.join("train.jsonl").to_str().unwrap(),
            "--graph",
            graph_path.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .status
        .success());
        artifacts.push((
            std::fs::read(run_dir.join("checkpoint.json")).unwrap(),
            std::fs::read(run_dir.join("trainlog.jsonl")).unwrap(),
        ));
    }
    assert_eq!(artifacts[0], artifacts[1]);
}

#[test]
fn config_with_unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let config_path = dir.path().join("bad.json");
    std::fs::write(
        &config_path,
        r#"{"embedding": {"input_dim": 4, "embed_dim": 2}, "surprise": true}"#,
    )
    .unwrap();
    let data_path = dir.path().join("none.jsonl");
    std::fs::write(&data_path, "").unwrap();
    let out = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn checkpoint_version_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let checkpoint_path = dir.path().join("checkpoint.json");
    std::fs::write(
        &checkpoint_path,
        r#"{"format_version": 99, "embedding": {"input_dim": 4, "embed_dim": 2},
            "num_labels": 10, "lambda": [1, 1, 1], "tensors": {}}"#,
    )
    .unwrap();
    let data_path = dir.path().join("probe.jsonl");
    std::fs::write(&data_path, "").unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        checkpoint_path.to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("version"), "{stderr}");
}

#[test]
fn expand_cli_runs_on_fixture_manifests() {
    // Reuse the committed core fixtures.
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .join("core/tests/fixtures/expansion");
    let dir = tempfile::tempdir().unwrap();
    let graph_path = write_graph(dir.path());
    let out_dir = dir.path().join("expanded");
    let out = run(&[
        "expand",
        "--real",
        fixtures.join("real.jsonl").to_str().unwrap(),
        "--candidates",
        fixtures.join("candidates.jsonl").to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--regions",
        "eye,lip_and_mouth,nose",
        "--quota",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest.jsonl").exists());
    assert!(out_dir.join("provenance.json").exists());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2 + 3);

    // bad region name is a usage-style data error
    let out = run(&[
        "expand",
        "--real",
        fixtures.join("real.jsonl").to_str().unwrap(),
        "--candidates",
        fixtures.join("candidates.jsonl").to_str().unwrap(),
        "--graph",
        graph_path.to_str().unwrap(),
        "--regions",
        "chin",
        "--quota",
        "1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
