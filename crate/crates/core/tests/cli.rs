//! Runs the `earlybranch` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use earlybranch::data::{sha256_hex, DomainDataset};
use earlybranch::harness::ResultTable;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earlybranch"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EARLYBRANCH_OUT")
        .output()
        .unwrap()
}

const SMALL: &str = r#"
[data]
samples_per_class = 6
height = 12
width = 12

[experiment]
steps = 3
eval_interval = 3
batch_size = 8

[experiment.network]
channels = [2, 2, 2, 2]
feature_dim = 4

[run]
seeds = [0, 1]
domains = [0, 5]
trials = 2
dump_batch = 8
"#;

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), SMALL).unwrap();
    for name in ["a.cebd", "b.cebd"] {
        let o = bin(&["gen-data", "--config", "c.toml", "--seed", "7", "--out", name], p);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(p.join("a.cebd")).unwrap();
    let b = std::fs::read(p.join("b.cebd")).unwrap();
    assert_eq!(sha256_hex(&a), sha256_hex(&b));
    let ds = DomainDataset::decode(&a).unwrap();
    assert_eq!(ds.len(), 6 * 10 * 6);
    assert_eq!(ds.num_domains(), 6);
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["train", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
}

#[test]
fn unknown_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["train", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[experiment]\nstepz = 3\n").unwrap();
    let o = bin(&["train", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_branch_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), SMALL).unwrap();
    let o = bin(&["ablate-branch", "--config", "c.toml", "--k", "0,1,2,3,4", "--out", "out"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = p.join("out");
    let table = ResultTable::load(&out.join("rows.csv")).unwrap();
    assert_eq!(table.len(), 5 * 2 * 2);
    assert!(out.join("config.resolved.toml").is_file());
    assert!(out.join("summary.json").is_file());
    assert_eq!(std::fs::read_dir(out.join("losses")).unwrap().count(), 20);

    // report rebuilds the summary from rows alone
    let before = std::fs::read_to_string(out.join("summary.json")).unwrap();
    std::fs::remove_file(out.join("summary.json")).unwrap();
    let o = bin(&["report", "--out", "out"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn train_search_and_style_dump_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), SMALL).unwrap();
    let o = bin(&["gen-data", "--config", "c.toml", "--out", "d.cebd"], p);
    assert!(o.status.success());

    let o = bin(&["train", "--config", "c.toml", "--data", "d.cebd", "--target", "2", "--out", "t"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rows.csv", "summary.json", "trials.json", "config.resolved.toml"] {
        assert!(p.join("t").join(f).is_file(), "{f}");
    }
    let ckpts: Vec<_> = std::fs::read_dir(p.join("t/checkpoints")).unwrap().collect();
    assert!(!ckpts.is_empty());

    let o = bin(&["search", "--config", "c.toml", "--data", "d.cebd", "--out", "s"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(ResultTable::load(&p.join("s/rows.csv")).unwrap().len(), 2);
    assert!(p.join("s/best.toml").is_file());

    let o = bin(&["style-dump", "--config", "c.toml", "--data", "d.cebd", "--out", "sd"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(p.join("sd/styles.csv")).unwrap();
    for m in ["rds", "mixstyle", "dsu"] {
        assert!(text.lines().any(|l| l.starts_with(m)), "{m}");
    }
}

#[test]
fn missing_data_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["loo", "--data", "nope.cebd", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.cebd"));
    assert!(!dir.path().join("o").exists());
}
