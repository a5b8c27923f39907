use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modbayes::pipeline::Manifest;

const SMALL: &str = r#"
seed = 5
[gp]
n_starts = 2
[gpcode]
n_design = 8
n_starts = 2
q2_threshold = 0.5
[mcmc]
n_samples = 2000
burn_in = 500
thin = 5
warmup = 200
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_modbayes"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn alpha_not_above_beta_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[tsa]\nalpha = 0.05\nbeta = 0.05\n").unwrap();
    let out = run(&["run"], &cfg, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn later_stage_without_predecessor_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&["emulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(3));
    let out = bin().args(["mcmc"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_chain_through_the_manifest_and_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let staged = tmp.path().join("staged");
    for stage in ["synth", "tsa", "emulate", "mcmc", "analyze"] {
        let out = run(&[stage, "--mode", "nobias"], &cfg, &staged);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let m = Manifest::load(&staged).unwrap();
    assert_eq!(m.stages, ["synth", "tsa", "emulate", "mcmc_nobias", "analyze_nobias"].map(String::from));
    for f in m.files.values() {
        assert!(staged.join(f).is_file(), "{f} missing");
    }
    for key in ["tests", "partition", "gpbias", "gpcode", "validation", "chain_nobias", "posterior_nobias"] {
        assert!(m.files.contains_key(key), "{key} not recorded");
    }

    let out = run(&["mcmc", "--mode", "withbias"], &cfg, &staged);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load(&staged).unwrap();
    assert!(m.files.contains_key("chain_withbias") && m.files.contains_key("chain_nobias"));

    let full = tmp.path().join("full");
    let out = run(&["run", "--mode", "nobias"], &cfg, &full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = contents(&staged);
    let b = contents(&full);
    for name in ["partition.csv", "gpcode.json", "chain_nobias.csv", "posterior_nobias.json"] {
        assert_eq!(a[name], b[name], "{name} differs between staged and full runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&b["report.json"]).unwrap();
    for f in report["files"].as_object().unwrap().values() {
        assert!(full.join(f.as_str().unwrap()).is_file());
    }
    assert_eq!(Manifest::load(&full).unwrap().status, "ok");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = run(&["run", "--threads", "1"], &cfg, dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ca, cb) = (contents(&a), contents(&b));
    assert_eq!(ca.keys().collect::<Vec<_>>(), cb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ca {
        assert!(bytes == &cb[name], "{name} differs between reruns");
    }
    let out = run(&["run", "--seed", "6"], &cfg, &tmp.path().join("c"));
    assert!(out.status.success());
    assert_ne!(contents(&tmp.path().join("c"))["chain_withbias.csv"], ca["chain_withbias.csv"]);
}

#[test]
fn failed_gate_exits_four_and_keeps_the_partial_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("q2_threshold = 0.5", "q2_threshold = 1.0");
    fs::write(&cfg, text).unwrap();
    let dir = tmp.path().join("out");
    let out = run(&["run"], &cfg, &dir);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load(&dir).unwrap();
    assert_eq!(m.status, "failed");
    assert!(m.error.as_deref().unwrap_or("").contains("predictivity"));
    assert!(m.stages.contains(&"tsa".to_string()));
    assert!(dir.join("validation.json").is_file());
    assert!(!dir.join("report.json").exists());
}
