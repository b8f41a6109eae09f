use std::path::Path;
use std::process::Command;

fn himae(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_himae"))
        .args(args)
        .env("HIMAE_RUN_DIR", dir)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK: [&str; 10] = [
    "--set",
    "preset=tiny",
    "--set",
    "subjects=6",
    "--set",
    "windows_per_subject=6",
    "--set",
    "steps=4",
    "--set",
    "batch_size=8",
];

#[test]
fn unknown_subcommand_and_flag_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = himae(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = himae(dir.path(), &["profile", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(himae(dir.path(), &["profile", "--set", "model.patch_len=7"]).status.code(), Some(1));
    assert_eq!(himae(dir.path(), &["profile", "--set", "model.nope=1"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nunknown_knob = 3\n").unwrap();
    assert_eq!(
        himae(dir.path(), &["profile", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = himae(dir.path(), &["inspect-checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn profile_writes_config_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    std::fs::write(&cfg, "seed = 3\n[profile]\nrepeats = 2\nwarmup = 0\n").unwrap();
    let out = himae(dir.path(), &["profile", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("profile-seed3");
    assert!(run.join("config.toml").exists());
    let report = read_json(&run.join("efficiency.json"));
    let params = report["params"].as_u64().unwrap();
    assert!((1_220_000..1_280_000).contains(&params));
    assert_eq!(report["memory_bytes"].as_u64().unwrap(), 4 * params);
    assert_eq!(report["schema_version"], 1);
}

#[test]
fn pretrain_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let run_dir = dir.path().join(run);
        let mut args = vec!["pretrain", "--seed", "7", "--run-dir", run_dir.to_str().unwrap()];
        args.extend(QUICK);
        let out = himae(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let r = read_json(&run_dir.join("results.json"));
        hashes.push(r["results"]["trainer_checkpoint_sha256"].as_str().unwrap().to_string());
        assert!(run_dir.join("loss.csv").exists());
    }
    assert_eq!(hashes[0], hashes[1]);

    let ck = dir.path().join("a").join("model.ckpt");
    let out = himae(dir.path(), &["inspect-checkpoint", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("param."));
}

#[test]
fn sweep_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--grid", "mask_ratio=0.5,0.6,0.7,0.8,0.9"];
    args.extend(QUICK);
    let out = himae(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep-seed0").join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn synth_and_sqi_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "subjects=3", "--set", "windows_per_subject=4"];
    let mut args = vec!["synth"];
    args.extend(small);
    assert_eq!(himae(dir.path(), &args).status.code(), Some(0));
    let shard = himae::data::store::read_shard(&dir.path().join("synth-seed0").join("windows.hmws")).unwrap();
    assert_eq!(shard.shape().batch, 12);
    let mut args = vec!["sqi"];
    args.extend(small);
    assert_eq!(himae(dir.path(), &args).status.code(), Some(0));
    let rows = himae::data::store::read_manifest(&dir.path().join("sqi-seed0").join("sqi_manifest.csv")).unwrap();
    assert_eq!(rows.len(), 12);
}
