use std::path::Path;
use std::process::{Command, Output};

fn causal_al(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-al"))
        .current_dir(dir)
        .args(args)
        .env_remove("CAUSAL_AL_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FAST: [&str; 12] = [
    "--set", "n_runs=1", "--set", "n_iter=3", "--set", "batch_size=40", "--set", "forest_trees=5", "--set", "knn_k=2",
    "--set", "accuracy=false",
];

fn synth(dir: &Path) {
    let o = causal_al(dir, &["synth", "--out", ".", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = causal_al(dir.path(), &["discover", "--set", "features=nope.csv", "--out", "."]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("E_IO: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = causal_al(dir.path(), &["cluster", "--config", "absent.conf"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("E_IO: "));
}

#[test]
fn bad_parameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["cluster", "--set", "n_components=0"],
        vec!["cluster", "--set", "spectrum=laplacian"],
        vec!["cluster", "--set", "noequals"],
        vec!["cluster"],
    ] {
        let o = causal_al(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).starts_with("E_CONFIG: "), "{args:?}: {}", stderr(&o));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_causal-al"))
        .current_dir(dir.path())
        .args(["cluster", "--out", "."])
        .env("CAUSAL_AL_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn no_causal_lever_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec!["all", "--config", "pipeline.conf", "--set", "prune_threshold=1000"];
    args.extend(FAST);
    let o = causal_al(dir.path(), &args);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("E_NUMERIC: "));
}

#[test]
fn stages_rerun_from_persisted_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec!["all", "--config", "pipeline.conf"];
    args.extend(FAST);
    let o = causal_al(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for stage in ["cluster", "discover", "select-features", "active-learn", "intervene", "match", "report"] {
        assert!(stdout.contains(&format!("{stage}: ")), "{stage} missing from {stdout}");
        assert!(dir.path().join(format!("manifest.{stage}.txt")).exists());
    }
    let before = std::fs::read(dir.path().join("neighbors.csv")).unwrap();
    std::fs::remove_file(dir.path().join("neighbors.csv")).unwrap();
    let mut args = vec!["match", "--config", "pipeline.conf"];
    args.extend(FAST);
    assert!(causal_al(dir.path(), &args).status.success());
    assert_eq!(std::fs::read(dir.path().join("neighbors.csv")).unwrap(), before);

    let manifest = std::fs::read_to_string(dir.path().join("manifest.match.txt")).unwrap();
    for key in ["stage = match", "input.reference.sha256 = ", "param.knn_k = 2", "duration_ms = ", "timestamp = "] {
        assert!(manifest.contains(key), "{key} not in manifest");
    }
    for f in ["report/histogram.csv", "report/similarity.csv", "report/pca.csv", "plans.csv", "runs/active_0.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn seed_env_overrides_config_and_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_causal-al"));
        cmd.current_dir(dir.path()).args(["cluster", "--config", "pipeline.conf"]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        match env {
            Some(e) => cmd.env("CAUSAL_AL_SEED", e),
            None => cmd.env_remove("CAUSAL_AL_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read_to_string(dir.path().join("manifest.cluster.txt"))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("param.seed ="))
            .unwrap()
            .to_string()
    };
    assert_eq!(run(None, None), "param.seed = 3");
    assert_eq!(run(Some("8"), None), "param.seed = 8");
    assert_eq!(run(Some("8"), Some("9")), "param.seed = 9");
}

#[test]
fn graph_dist_prints_the_distance() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "child,parent,weight\nb,a,1.0\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "child,parent,weight\nb,a,2.0\n").unwrap();
    let o = causal_al(dir.path(), &["graph-dist", "a.csv", "b.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "1.0");
    let o = causal_al(dir.path(), &["graph-dist", "a.csv", "missing.csv"]);
    assert_eq!(o.status.code(), Some(3));
}
