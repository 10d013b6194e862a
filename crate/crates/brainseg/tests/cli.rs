//! End-to-end contract tests for the command-line interface: artifact
//! layouts, output grammar, exit codes and clean failure on bad input.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EXIT_VALIDATION: i32 = 2;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainseg")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let output = run(args);
    assert!(
        output.status.success(),
        "brainseg {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

fn assert_validation_failure(args: &[&str], needle: &str) {
    let output = run(args);
    let stderr = String::from_utf8_lossy(&output.stderr).to_string();
    assert_eq!(
        output.status.code(),
        Some(EXIT_VALIDATION),
        "brainseg {args:?} should exit {EXIT_VALIDATION}; stderr: {stderr}"
    );
    assert!(stderr.contains(needle), "stderr {stderr:?} lacks {needle:?}");
}

fn gen_phantom(dir: &Path, cases: usize) -> PathBuf {
    let data = dir.join("data");
    run_ok(&[
        "gen-phantom",
        "--out",
        data.to_str().unwrap(),
        "--cases",
        &cases.to_string(),
        "--seed",
        "5",
        "--dims",
        "32,32,8",
    ]);
    data
}

fn write_config(dir: &Path, data: &Path, out_name: &str) -> PathBuf {
    let config = serde_json::json!({
        "data_root": data.to_str().unwrap(),
        "output_dir": dir.join(out_name).to_str().unwrap(),
        "split_ratios": [0.5, 0.25, 0.25],
        "exclusions": [],
        "slice_start": 2,
        "slice_count": 4,
        "image_size": 32,
        "depth": 2,
        "base_filters": 4,
        "seed": 5,
        "learning_rate": 1e-3,
        "batch_size": 4,
        "max_epochs": 2,
    });
    let path = dir.join(format!("{out_name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// Phantom data plus a two-epoch training run, the substrate for the
/// evaluate and explain tests.
fn trained_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = gen_phantom(dir, 6);
    let config = write_config(dir, &data, "run");
    run_ok(&["train", "--config", config.to_str().unwrap()]);
    (config, dir.join("run"))
}

#[test]
fn gen_phantom_writes_the_documented_layout_and_manifest() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let stdout = run_ok(&[
        "gen-phantom",
        "--out",
        data.to_str().unwrap(),
        "--cases",
        "3",
        "--seed",
        "9",
        "--dims",
        "32,32,8",
    ]);

    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        assert!(
            line.starts_with(&format!("phantom_{i:03} 32x32x8 ")),
            "unexpected manifest line {line:?}"
        );
    }
    for i in 0..3 {
        let case = data.join(format!("phantom_{i:03}"));
        for volume in ["flair.nii", "t1ce.nii", "seg.nii"] {
            assert!(case.join(volume).is_file(), "missing {volume} in case {i}");
        }
    }

    // The same seed writes the same bytes.
    let again = dir.path().join("again");
    run_ok(&[
        "gen-phantom",
        "--out",
        again.to_str().unwrap(),
        "--cases",
        "3",
        "--seed",
        "9",
        "--dims",
        "32,32,8",
    ]);
    for volume in ["flair.nii", "seg.nii"] {
        let a = std::fs::read(data.join("phantom_000").join(volume)).unwrap();
        let b = std::fs::read(again.join("phantom_000").join(volume)).unwrap();
        assert_eq!(a, b, "{volume} differs between identical seeds");
    }
}

#[test]
fn gen_phantom_rejects_small_plane_dims_without_partial_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("tiny");
    assert_validation_failure(
        &[
            "gen-phantom",
            "--out",
            out.to_str().unwrap(),
            "--cases",
            "1",
            "--seed",
            "0",
            "--dims",
            "8,8,8",
        ],
        "in-plane dims must be at least 32",
    );
    assert!(!out.exists(), "failed generation left a partial directory");
}

#[test]
fn train_writes_artifacts_and_history_rows() {
    let dir = TempDir::new().unwrap();
    let data = gen_phantom(dir.path(), 6);
    let config = write_config(dir.path(), &data, "run");
    let stdout = run_ok(&["train", "--config", config.to_str().unwrap()]);

    let out = dir.path().join("run");
    for artifact in ["config.resolved.json", "history.csv", "best.weights", "final.weights"] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }

    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,train_dice,val_dice,lr,seconds");
    assert_eq!(lines.len(), 3, "two epochs should write two rows");
    for (i, row) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0], (i + 1).to_string());
        for field in &fields[1..] {
            field.parse::<f64>().unwrap();
        }
        assert_eq!(*fields.last().unwrap(), "0.00000e0", "wall time is not recorded by default");
    }

    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch ")).count(), 2);

    // The resolved config reloads as valid JSON with the seed intact.
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["seed"], 5);
    assert_eq!(resolved["image_size"], 32);
}

#[test]
fn train_fails_cleanly_on_missing_data_root() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &dir.path().join("nope"), "run");
    assert_validation_failure(&["train", "--config", config.to_str().unwrap()], "nope");
    assert!(!dir.path().join("run").exists(), "failed run left an output directory");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(
        &path,
        r#"{"data_root": "x", "output_dir": "y", "learning_rte": 0.1}"#,
    )
    .unwrap();
    assert_validation_failure(&["train", "--config", path.to_str().unwrap()], "learning_rte");
}

#[test]
fn evaluate_emits_the_exact_json_schema() {
    let dir = TempDir::new().unwrap();
    let (config, out) = trained_fixture(dir.path());
    let weights = out.join("best.weights");
    let stdout = run_ok(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--split",
        "val",
    ]);

    let json_line = stdout.lines().last().unwrap();
    let value: serde_json::Value = serde_json::from_str(json_line).unwrap();
    let object = value.as_object().unwrap();
    let expected = [
        "dice",
        "mean_iou",
        "categorical_accuracy",
        "sensitivity",
        "specificity",
        "per_class_dice",
    ];
    assert_eq!(object.len(), expected.len());
    for key in expected {
        assert!(object.contains_key(key), "missing key {key}");
    }
    // Keys appear in the documented order in the serialized line itself.
    let positions: Vec<usize> =
        expected.iter().map(|k| json_line.find(&format!("\"{k}\"")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "keys out of order in {json_line}");
    assert_eq!(value["per_class_dice"].as_array().unwrap().len(), 4);

    // Every split name in the grammar is accepted.
    for split in ["train", "test"] {
        run_ok(&[
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--split",
            split,
        ]);
    }
}

#[test]
fn evaluate_rejects_unknown_split_names() {
    let dir = TempDir::new().unwrap();
    let (config, out) = trained_fixture(dir.path());
    assert_validation_failure(
        &[
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--weights",
            out.join("best.weights").to_str().unwrap(),
            "--split",
            "bogus",
        ],
        "bogus",
    );
}

#[test]
fn evaluate_rejects_mismatched_weights() {
    let dir = TempDir::new().unwrap();
    let (config, _) = trained_fixture(dir.path());
    // A valid weights file whose topology disagrees with the config.
    let other = brainseg_core::model::AttentionUNet::<f32>::new(brainseg_core::model::ModelConfig {
        in_channels: 2,
        num_classes: 4,
        depth: 1,
        base_filters: 4,
        attention_enabled: true,
        seed: 0,
    })
    .unwrap();
    let weights = dir.path().join("other.weights");
    brainseg::weights::save_weights(&other, &weights).unwrap();
    assert_validation_failure(
        &[
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--split",
            "val",
        ],
        "does not match the config",
    );
}

#[test]
fn explain_writes_six_artifacts_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (config, out) = trained_fixture(dir.path());
    let weights = out.join("best.weights");
    let explain = |target: &str| {
        let target_dir = dir.path().join(target);
        let stdout = run_ok(&[
            "explain",
            "--config",
            config.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--case",
            "phantom_000",
            "--slice",
            "3",
            "--out",
            target_dir.to_str().unwrap(),
        ]);
        assert!(stdout.contains("wrote 6 files"));
        target_dir
    };

    let first = explain("explain1");
    let artifacts = [
        "original.ppm",
        "heatmap.ppm",
        "overlay.ppm",
        "triptych.ppm",
        "heatmap.csv",
        "metadata.json",
    ];
    for artifact in artifacts {
        assert!(first.join(artifact).is_file(), "missing {artifact}");
    }

    let metadata: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("metadata.json")).unwrap())
            .unwrap();
    assert_eq!(metadata["target_layer"], "dec0.conv2");
    assert_eq!(metadata["class"], "combined");
    assert_eq!(metadata["case"], "phantom_000");
    assert_eq!(metadata["slice"], 3);

    // The triptych is three image-size panels side by side.
    let triptych = std::fs::read(first.join("triptych.ppm")).unwrap();
    assert!(triptych.starts_with(b"P6\n96 32\n255\n"));

    let second = explain("explain2");
    for artifact in artifacts {
        assert_eq!(
            std::fs::read(first.join(artifact)).unwrap(),
            std::fs::read(second.join(artifact)).unwrap(),
            "{artifact} differs between identical runs"
        );
    }
}

#[test]
fn explain_rejects_out_of_window_slices_and_bad_classes() {
    let dir = TempDir::new().unwrap();
    let (config, out) = trained_fixture(dir.path());
    let weights = out.join("best.weights");
    let base = [
        "explain",
        "--config",
        config.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--case",
        "phantom_000",
    ];

    let scratch = dir.path().join("scratch");
    let scratch = scratch.to_str().unwrap();

    let mut off_window = base.to_vec();
    off_window.extend(["--slice", "7", "--out", scratch]);
    assert_validation_failure(&off_window, "slice");

    let mut bad_class = base.to_vec();
    bad_class.extend(["--slice", "3", "--class", "7", "--out", scratch]);
    assert_validation_failure(&bad_class, "--class 7 is out of range");

    let mut bad_case = base.to_vec();
    bad_case[6] = "phantom_999";
    bad_case.extend(["--slice", "3", "--out", scratch]);
    assert_validation_failure(&bad_case, "phantom_999");
}

#[test]
fn per_class_explanations_differ_between_classes() {
    let dir = TempDir::new().unwrap();
    let (config, out) = trained_fixture(dir.path());
    let weights = out.join("best.weights");
    let csv_for = |class: &str| {
        let target_dir = dir.path().join(format!("class{class}"));
        run_ok(&[
            "explain",
            "--config",
            config.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--case",
            "phantom_000",
            "--slice",
            "3",
            "--class",
            class,
            "--out",
            target_dir.to_str().unwrap(),
        ]);
        std::fs::read(target_dir.join("heatmap.csv")).unwrap()
    };
    assert_ne!(csv_for("1"), csv_for("2"), "class-conditioned heatmaps should differ");
}
