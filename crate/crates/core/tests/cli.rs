use std::path::{Path, PathBuf};
use std::process::Command;

use histitch::harness::ExperimentConfig;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn shipped_configs_match_the_builtin_profiles() {
    for name in ExperimentConfig::PROFILES {
        let path = repo_root().join("configs").join(format!("{name}.toml"));
        let mut loaded = ExperimentConfig::load(&path).unwrap();
        let profile = ExperimentConfig::profile(name).unwrap();
        assert_eq!(loaded.output, Path::new("runs").join(name));
        for (got, want) in [
            (&mut loaded.environment.layout, &profile.environment.layout),
            (&mut loaded.environment.vocabulary, &profile.environment.vocabulary),
        ] {
            assert_eq!(got.is_some(), want.is_some(), "{name}");
            if let (Some(g), Some(w)) = (got.as_ref(), want) {
                assert_eq!(std::fs::read(g).unwrap(), std::fs::read(repo_root().join(w)).unwrap());
            }
            *got = want.clone();
        }
        loaded.output = profile.output.clone();
        assert_eq!(loaded, profile, "{name}");
    }
}

fn histitch(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_histitch")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\nunknown_key = 3\n").unwrap();
    let out = histitch(&["solve", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config_error]"));

    let out = histitch(&["solve", "--config", "missing.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_writes_metrics_and_a_config_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = histitch(
        &["solve", "--config", repo_root().join("configs/stitching.toml").to_str().unwrap(), "--out", "run"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(tmp.path().join("run/run_metrics.csv")).unwrap();
    assert!(metrics.starts_with("# histitch-csv v1\nalgorithm,n,seed,"));
    assert!(metrics.lines().nth(2).unwrap().starts_with("pevi+phi,200,0,"));
    let snapshot = ExperimentConfig::from_toml(&std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap()).unwrap();
    assert_eq!(snapshot.algorithm, ExperimentConfig::stitching().algorithm);
}
