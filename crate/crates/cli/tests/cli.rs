use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dualcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualcp"))
        .args(args)
        .env_remove("DUALCP_THREADS")
        .output()
        .expect("spawn dualcp")
}

fn ok(args: &[&str]) -> Output {
    let out = dualcp(args);
    assert!(
        out.status.success(),
        "dualcp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--classes",
    "8",
    "--domains",
    "2",
    "--dim",
    "24",
    "--groups",
    "3,2,2,1",
    "--per-class",
    "30",
    "--test-per-class",
    "10",
];

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--out", p(&data)];
    args.extend_from_slice(SMALL);
    ok(&args);
    data
}

/// prototypes -> train -> eval; returns the eval directory.
fn pipeline(dir: &Path, data: &Path, proto_flags: &[&str], tag: &str) -> PathBuf {
    let bank_dir = dir.join(format!("bank-{tag}"));
    let model_dir = dir.join(format!("model-{tag}"));
    let eval_dir = dir.join(format!("eval-{tag}"));
    let guidance = data.join("guidance.dcp");
    let mut args = vec![
        "prototypes",
        "--guidance",
        p(&guidance),
        "--out",
        p(&bank_dir),
    ];
    args.extend_from_slice(proto_flags);
    ok(&args);
    let bank = bank_dir.join("bank.dcpb");
    let train = data.join("train.dcp");
    ok(&[
        "train",
        "--embeddings",
        p(&train),
        "--bank",
        p(&bank),
        "--epochs",
        "5",
        "--batch",
        "32",
        "--out",
        p(&model_dir),
    ]);
    let test = data.join("test.dcp");
    let model = model_dir.join("model.dcpk");
    ok(&[
        "eval",
        "--embeddings",
        p(&test),
        "--bank",
        p(&bank),
        "--model",
        p(&model),
        "--csv",
        "--out",
        p(&eval_dir),
    ]);
    eval_dir
}

#[test]
fn verify_passes() {
    let out = ok(&["verify"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    assert!(!text.contains("FAIL"));
}

#[test]
fn zero_epochs_is_a_usage_error() {
    let out = dualcp(&[
        "train",
        "--epochs",
        "0",
        "--embeddings",
        "a",
        "--bank",
        "b",
        "--out",
        "c",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(dualcp(&["train"]).status.code(), Some(2));
    assert_eq!(dualcp(&["nonsense"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dualcp(&[
        "prototypes",
        "--guidance",
        "g",
        "--p",
        "1.5",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "missing file is reported before the threshold"
    );
    let data = synth(dir.path());
    let g = data.join("guidance.dcp");
    let out = dualcp(&[
        "prototypes",
        "--guidance",
        p(&g),
        "--p",
        "1.5",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualcp(&[
        "train",
        "--embeddings",
        "missing.dcp",
        "--bank",
        "missing.dcpb",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let a = pipeline(dir.path(), &data, &[], "a");
    let b = pipeline(dir.path(), &data, &[], "b");
    for file in ["report.json", "predictions.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    for (x, y) in [
        ("bank-a/bank.dcpb", "bank-b/bank.dcpb"),
        ("model-a/model.dcpk", "model-b/model.dcpk"),
    ] {
        assert_eq!(
            fs::read(dir.path().join(x)).unwrap(),
            fs::read(dir.path().join(y)).unwrap()
        );
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert!(report["average_accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(report["num_groups"], 4);
    for dir in [dir.path().join("model-a"), a] {
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join("run.json")).unwrap()).unwrap();
        assert!(manifest["git"].is_string());
        assert_eq!(manifest["config"]["seed"], 0);
    }
}

#[test]
fn threshold_one_matches_vanilla_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let dual = pipeline(dir.path(), &data, &["--p", "1.0"], "p1");
    let vanilla = pipeline(dir.path(), &data, &["--vanilla"], "vanilla");
    assert_eq!(
        fs::read(dual.join("predictions.csv")).unwrap(),
        fs::read(vanilla.join("predictions.csv")).unwrap()
    );
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let eval = pipeline(dir.path(), &data, &[], "x");
    let bank = dir.path().join("bank-x/bank.dcpb");
    let model = dir.path().join("model-x/model.dcpk");
    let test = data.join("test.dcp");
    let capped = dir.path().join("capped");
    let out = Command::new(env!("CARGO_BIN_EXE_dualcp"))
        .args([
            "eval",
            "--embeddings",
            p(&test),
            "--bank",
            p(&bank),
            "--model",
            p(&model),
            "--out",
            p(&capped),
        ])
        .env("DUALCP_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(eval.join("report.json")).unwrap(),
        fs::read(capped.join("report.json")).unwrap()
    );
    let timing: serde_json::Value =
        serde_json::from_slice(&fs::read(capped.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["threads"], 1);

    let out = Command::new(env!("CARGO_BIN_EXE_dualcp"))
        .arg("verify")
        .env("DUALCP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prototypes_from_class_means() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("means");
    let train = data.join("train.dcp");
    ok(&[
        "prototypes",
        "--embeddings",
        p(&train),
        "--p",
        "0.5",
        "--out",
        p(&out),
    ]);
    let groups: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("groups.json")).unwrap()).unwrap();
    assert_eq!(groups["num_classes"], 8);
}
