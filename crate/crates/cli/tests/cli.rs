use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[network]
hidden = [8]

[collect]
trajectories = 2
duration = 6.0

[meta]
epochs = 2
h_a = 10
h_t = 10

[evaluate]
duration = 4.0
repeats = 1
controllers = ["ssml-ac", "pid"]
"#;

fn metaadapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaadapt"))
        .args(args)
        .env("METAADAPT_OUT", dir.join("out"))
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn full_run_writes_under_the_env_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    for args in [
        vec!["collect", "--config", &cfg],
        vec!["train", "--config", &cfg],
        vec!["evaluate", "--config", &cfg, "--controllers", "ssml-ac,pid", "--repeats", "1"],
        vec!["report", "--config", &cfg],
    ] {
        let out = metaadapt(dir.path(), &args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let root = dir.path().join("out");
    assert!(root.join("data/traj_01.csv").exists());
    assert!(root.join("model/ssml.json").exists());
    assert!(root.join("eval/metrics.json").exists());
    let report = fs::read_to_string(root.join("eval/report.txt")).unwrap();
    assert!(report.contains("ssml-ac"));
}

#[test]
fn out_flag_overrides_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let elsewhere = dir.path().join("elsewhere");
    let out = metaadapt(dir.path(), &["collect", "--config", &cfg, "--seed", "9", "--out", elsewhere.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(elsewhere.join("data/traj_00.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[sim]\ndt = 0.0\n");
    assert_eq!(code(&metaadapt(dir.path(), &["collect", "--config", &cfg])), 2);
    let cfg = write_config(dir.path(), "typo.toml", "[colect]\n");
    assert_eq!(code(&metaadapt(dir.path(), &["collect", "--config", &cfg])), 2);
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(code(&metaadapt(dir.path(), &["evaluate", "--config", &cfg, "--controllers", "lqr"])), 2);
}

#[test]
fn mismatched_checkpoint_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(code(&metaadapt(dir.path(), &["collect", "--config", &cfg])), 0);
    assert_eq!(code(&metaadapt(dir.path(), &["train", "--config", &cfg])), 0);
    let other = write_config(dir.path(), "other.toml", &format!("features = [\"velocity\"]\n{TINY}"));
    let out = metaadapt(dir.path(), &["evaluate", "--config", &other]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runaway_simulation_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "storm.toml",
        "[wind]\nkind = \"constant\"\nconstant = [1e150, 0.0, 0.0]\n[collect]\ntrajectories = 1\nduration = 2.0\n",
    );
    let out = metaadapt(dir.path(), &["collect", "--config", &cfg]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_without_evaluation_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = metaadapt(dir.path(), &["report"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("evaluate"));
}
