//! End-to-end runs of the `chemkan` binary on tiny toy problems.

use std::path::Path;
use std::process::{Command, Output};

fn chemkan(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemkan"))
        .args(args)
        .env("CHEMKAN_OUT", out_root)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn chemkan")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--set",
    "data.source='toy'",
    "--set",
    "data.toy_temperatures=[1000.0, 1100.0, 1200.0]",
    "--set",
    "data.toy_fuel=[0.7, 0.8, 0.9]",
    "--set",
    "data.toy.samples=6",
    "--set",
    "training.stage1_epochs=2",
    "--set",
    "training.stage2_epochs=2",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(chemkan(&["--help"], dir.path()).status.success());
    assert!(chemkan(&["train", "--help"], dir.path()).status.success());
    assert!(chemkan(&["--version"], dir.path()).status.success());
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["train", "--set", "training.lr=-1"],
        vec!["train", "--set", "no_such_block.x=1"],
        vec!["train", "--set", "missing_equals_sign"],
        vec!["evaluate"],
        vec!["train", "--config", "/nonexistent/config.toml"],
    ] {
        let o = chemkan(&args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn config_file_and_overrides_are_resolved() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[training]\nstage1_epochs = 7\n").unwrap();
    let out = dir.path().join("gen");
    let o = chemkan(
        &[
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "data.source='toy'",
            "--set",
            "data.toy.samples=4",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    let table: toml::Table = resolved.parse().unwrap();
    assert_eq!(table["training"]["stage1_epochs"].as_integer(), Some(7));
    assert_eq!(table["data"]["source"].as_str(), Some("toy"));
    assert_eq!(table["data"]["toy"]["samples"].as_integer(), Some(4));
}

#[test]
fn generated_files_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let o = chemkan(&with_tiny(&["generate", "--out", gen.to_str().unwrap()]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let train_manifest = gen.join("train.json");
    let test_manifest = gen.join("test.json");
    assert!(train_manifest.is_file() && test_manifest.is_file());

    // Retrain from the written files instead of regenerating.
    let set_train = format!("data.train_manifest='{}'", train_manifest.display());
    let set_test = format!("data.test_manifest='{}'", test_manifest.display());
    let run = dir.path().join("train");
    let o = chemkan(
        &[
            "train",
            "--out",
            run.to_str().unwrap(),
            "--set",
            "data.source='files'",
            "--set",
            &set_train,
            "--set",
            &set_test,
            "--set",
            "model={species=2, hidden=2, n_mu=1, grid_size=3, base=true, thermo=true, correction=true}",
            "--set",
            "training.stage1_epochs=2",
            "--set",
            "training.stage2_epochs=2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = run.join("chemkan.json");
    assert!(ck.is_file());
    assert!(run.join("stage1_trace.csv").is_file());

    let eval = dir.path().join("eval");
    let o = chemkan(
        &[
            "evaluate",
            "--out",
            eval.to_str().unwrap(),
            "--checkpoint",
            ck.to_str().unwrap(),
            "--set",
            "data.source='files'",
            "--set",
            &set_train,
            "--set",
            &set_test,
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(eval.join("evaluation.csv").is_file());
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = chemkan(&with_tiny(&["train"]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("train");
    assert!(run.join("resolved_config.toml").is_file());
    assert!(run.join("chemkan.json").is_file());

    let ck = run.join("chemkan.json");
    let o = chemkan(&with_tiny(&["bench", "--checkpoint", ck.to_str().unwrap()]), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("bench").join("bench.csv").is_file());
}
