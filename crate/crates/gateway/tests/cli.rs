mod common;

use std::path::Path;
use std::process::{Command, Output};

fn stylechat(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylechat"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env_remove("STYLECHAT_PORT")
        .env_remove("STYLECHAT_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("stylechat.toml");
    std::fs::write(&path, common::small_toml(&dir.join("data"))).unwrap();
    path
}

#[test]
fn gen_data_is_reproducible_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let out = stylechat(&["gen-data", "--seed", "7"], &write_config(dir));
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["catalog.jsonl", "nlu_examples.jsonl"] {
        let x = std::fs::read(a.path().join("data").join(file)).unwrap();
        let y = std::fs::read(b.path().join("data").join(file)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn train_all_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert!(stylechat(&["gen-data"], &config).status.success());
    let out = stylechat(&["train", "all"], &config);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "intent.nlu",
        "lexicon.json",
        "encoders.enc",
        "index.vix",
        "flow.cnf",
    ] {
        assert!(
            dir.path().join("data").join(file).is_file(),
            "{file} missing"
        );
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("nlu:") && stdout.contains("flow:"),
        "{stdout}"
    );
}

#[test]
fn serve_without_models_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = stylechat(&["serve"], &write_config(dir.path()));
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("intent.nlu"), "{stderr}");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "prot = 80\n").unwrap();
    let out = stylechat(&["gen-data"], &path);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}
