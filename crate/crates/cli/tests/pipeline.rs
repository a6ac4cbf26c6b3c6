use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smerf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smerf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = ["--reasoning", "simple-fr", "--scale", "0.01", "--eval-per-bucket", "2"];

#[test]
fn missing_dataset_names_the_expected_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = smerf(dir.path(), &[&["train"][..], &SMALL].concat());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let expected = dir.path().join("simple-fr").join("dataset").join("manifest.json");
    assert!(stderr(&o).contains(&expected.display().to_string()), "{}", stderr(&o));
}

#[test]
fn corrupted_shard_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = smerf(dir.path(), &[&["generate"][..], &SMALL].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let shard = dir.path().join("simple-fr/dataset/train-b02.shd");
    let mut bytes = fs::read(&shard).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(&shard, bytes).unwrap();
    let o = smerf(dir.path(), &[&["train"][..], &SMALL].concat());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("train-b02.shd"), "{}", stderr(&o));
}

#[test]
fn unverified_model_is_kept_but_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = smerf(dir.path(), &[&["generate"][..], &SMALL].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let frozen = [&["train"][..], &SMALL, &["--learning-rate", "1e-12", "--max-epochs", "1", "--max-restarts", "0"]].concat();
    let o = smerf(dir.path(), &frozen);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("train_report.json"), "{}", stderr(&o));

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("simple-fr/model/model.json")).unwrap()).unwrap();
    assert_eq!(sidecar["verified"], false);
    assert!(dir.path().join("simple-fr/model/model.ckpt").exists());

    let o = smerf(dir.path(), &[&["attribute"][..], &SMALL, &["--methods", "gradient"]].concat());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));
    assert!(!dir.path().join("simple-fr/attributions/attributions.bin").exists());
}

#[test]
fn bad_flags_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = smerf(dir.path(), &["generate", "--reasoning", "simple-xx"]);
    assert_eq!(o.status.code(), Some(2));
    let o = smerf(dir.path(), &["generate", "--methods", "occlusion"]);
    assert_eq!(o.status.code(), Some(2));
    let o = smerf(dir.path(), &["generate", "--scale", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "reasoning = \"complex-cr2\"\nseed = 11\n[train]\nmax_epochs = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_smerf"))
        .args(["config", "--seed", "12", "--config"])
        .arg(&file)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = smerf_cli::config::RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, 12);
    assert_eq!(cfg.train.max_epochs, 3);
    assert_eq!(cfg.reasoning, vec![smerf_core::reasoning::ReasoningKind::ComplexCr2]);
}

#[test]
fn evaluate_rejects_a_tampered_dump() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&["all"][..], &SMALL, &["--methods", "gradient,lrp-z"]].concat();
    let o = smerf(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("simple-fr/metrics/metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "reasoning,method,bucket,image,pafl,safl,background,pmafl,smafl,piou,siou,object_count,dual_feature,weak_evidence"
    );
    assert!(dir.path().join("report/success_matrix.csv").exists());
    assert!(dir.path().join("simple-fr/figures/pafl_safl.svg").exists());

    let dump = dir.path().join("simple-fr/attributions/attributions.bin");
    let mut bytes = fs::read(&dump).unwrap();
    let at = bytes.len() - 3;
    bytes[at] ^= 0x01;
    fs::write(&dump, bytes).unwrap();
    let o = smerf(dir.path(), &[&["evaluate"][..], &SMALL].concat());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}
