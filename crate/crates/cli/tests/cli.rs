use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmcr_cli::manifest::{RunManifest, MANIFEST_FILE};
use mmcr_cli::{ExperimentConfig, Preset};

fn mmcr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmcr")).args(args).current_dir(cwd).env_remove("MMCR_OUTPUT_DIR").output().unwrap()
}

fn short_config(dir: &Path, preset: Preset, seed: u64) -> String {
    let mut cfg = ExperimentConfig::preset(preset);
    cfg.seed = seed;
    cfg.training.epochs = 3;
    let path = dir.join(format!("{preset}-{seed}.toml"));
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(run: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(run.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn hash_of(m: &RunManifest, file: &str) -> String {
    m.files.iter().find(|f| f.path == file).unwrap_or_else(|| panic!("{file} missing from manifest")).sha256.clone()
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), Preset::TrainBasic, 7);
    for out in ["a", "b"] {
        let o = mmcr(&["run", &cfg, "--output-dir", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = manifest(&dir.path().join("a/train-basic/seed-7"));
    let b = manifest(&dir.path().join("b/train-basic/seed-7"));
    assert!(a.deterministic);
    for file in ["history.jsonl", "encoder.bin", "metrics.json"] {
        assert_eq!(hash_of(&a, file), hash_of(&b, file), "{file}");
    }

    let other = short_config(dir.path(), Preset::TrainBasic, 8);
    assert!(mmcr(&["run", &other, "--output-dir", "a"], dir.path()).status.success());
    let c = manifest(&dir.path().join("a/train-basic/seed-8"));
    assert_ne!(hash_of(&a, "history.jsonl"), hash_of(&c, "history.jsonl"));
}

#[test]
fn unknown_preset_is_rejected_with_the_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "experiment = \"train-fancy\"\n").unwrap();
    let o = mmcr(&["run", path.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("bad.toml"), "{msg}");

    let o = mmcr(&["show-preset", "train-fancy"], dir.path());
    assert!(!o.status.success());
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(Preset::ALL.iter().all(|p| msg.contains(p.name())), "{msg}");
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "experiment = \"train-basic\"\n[training]\nepoch = 3\n").unwrap();
    let o = mmcr(&["run", path.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn report_summarizes_runs_and_env_sets_output() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1, 2] {
        let cfg = short_config(dir.path(), Preset::TheoremVerify, seed);
        let o = Command::new(env!("CARGO_BIN_EXE_mmcr"))
            .args(["run", &cfg])
            .current_dir(dir.path())
            .env("MMCR_OUTPUT_DIR", "from-env")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("from-env/theorem-verify/seed-2").is_dir());
    let o = mmcr(&["report", "from-env"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("from-env/report.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("theorem-verify,optimality_violations,")).unwrap();
    assert!(row.starts_with("theorem-verify,optimality_violations,2,0,0,"), "{row}");

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = mmcr(&["report", "empty"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn tampered_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), Preset::TheoremVerify, 0);
    assert!(mmcr(&["run", &cfg, "--output-dir", "runs"], dir.path()).status.success());
    fs::write(dir.path().join("runs/theorem-verify/seed-0/theorem.json"), "{}").unwrap();
    let report = mmcr_cli::report::build_report(&dir.path().join("runs")).unwrap();
    assert_eq!(report.runs, 1);
    assert!(report.problems.iter().any(|p| p.contains("theorem.json")), "{:?}", report.problems);
}
