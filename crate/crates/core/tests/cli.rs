use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_neurocoproc");

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out_dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("NEUROCOPROC_OUTPUT_DIR", out_dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn encode_demo_succeeds_into_the_override_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("enc");
    let cfg = configs().join("encode_demo.toml");
    let o = run(&["encode-demo", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["decode-bench", "no/such/file.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = [1]\noutput_dir = \"o\"\n[codec]\nkalman_sample = 10\n").unwrap();
    let o = run(&["decode-bench", cfg.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]:") && err.contains("kalman_sample"), "{err}");
}

#[test]
fn run_needs_a_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", configs().join("eval.toml").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario"));
}

#[test]
fn non_empty_foreign_output_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("keep.txt"), "mine").unwrap();
    let cfg = configs().join("encode_demo.toml");
    let o = run(&["encode-demo", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(tmp.path().join("keep.txt")).unwrap(), "mine");
}

#[test]
fn unknown_subcommand_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train-everything"], tmp.path());
    assert!(!o.status.success());
}

#[test]
fn grad_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["grad-check"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.lines().filter(|l| l.ends_with("pass")).count(), 11, "{table}");
}
