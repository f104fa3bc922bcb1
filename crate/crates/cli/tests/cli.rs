use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
problem = "2bp"
n_ic = 4
dp = 200
alpha = 5
seed = 3

[train]
epochs = 100
batch_size = 8
learning_rate = 1e-3
weight_decay = 1e-5
alpha = 5
hidden_layers = 2
neurons_per_layer = 8
lifted_size = 3
seed = 5

[train.loss]
gamma = 0.8
beta = 1.0
lambda1 = 0.04
lambda2 = 0.01
lambda_rv = 0.001

[[scenario]]
name = "leo"
problem = "2bp"
altitude_km = 500.0
periods = 2

[[scenario]]
name = "l1"
problem = "cr3bp"
x_multiplier = 1.02
hours = 5.0
"#;

fn orbkoop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbkoop"))
        .current_dir(dir)
        .env_remove("ORBKOOP_CONFIG")
        .env_remove("ORBKOOP_PRESET")
        .env_remove("ORBKOOP_SEED")
        .env_remove("ORBKOOP_OUT")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "a", "gen-data"]));
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "b", "gen-data"]));
    for f in ["meta.json", "traj_0000.csv", "traj_0003.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    ok(&orbkoop(d, &["--config", "run.toml", "--out", "m1.json", "train", "--data", "a"]));
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "m2.json", "train", "--data", "b"]));
    assert_eq!(fs::read(d.join("m1.json")).unwrap(), fs::read(d.join("m2.json")).unwrap());
    assert_eq!(fs::read(d.join("m1_loss.csv")).unwrap(), fs::read(d.join("m2_loss.csv")).unwrap());

    let losses: Vec<f64> = fs::read_to_string(d.join("m1_loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 100);
    assert!(losses[99] < losses[0], "{} -> {}", losses[0], losses[99]);

    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m1.json")).unwrap()).unwrap();
    assert_eq!(model["model"]["k"]["rows"], 7);

    ok(&orbkoop(d, &["--config", "run.toml", "--out", "p.csv", "predict", "--model", "m1.json"]));
    let rows = fs::read_to_string(d.join("p.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 200 + 1);

    let out = orbkoop(d, &["--config", "run.toml", "--out", "ev", "eval", "--model", "m1.json", "--scenario", "leo"]);
    ok(&out);
    let summary = fs::read_to_string(d.join("ev/summary.txt")).unwrap();
    assert!(summary.contains("% of mean radius"));
    for f in ["errors.csv", "invariants.csv", "prediction.csv"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_flag_and_env_override_agree() {
    let dir = setup();
    let d = dir.path();
    ok(&orbkoop(d, &["--config", "run.toml", "--seed", "11", "--out", "a", "gen-data"]));
    let out = Command::new(env!("CARGO_BIN_EXE_orbkoop"))
        .current_dir(d)
        .env("ORBKOOP_CONFIG", "run.toml")
        .env("ORBKOOP_SEED", "11")
        .env("ORBKOOP_OUT", "b")
        .arg("gen-data")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(fs::read(d.join("a/meta.json")).unwrap(), fs::read(d.join("b/meta.json")).unwrap());
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "c", "gen-data"]));
    assert_ne!(fs::read(d.join("a/meta.json")).unwrap(), fs::read(d.join("c/meta.json")).unwrap());
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), format!("{SMALL}\nunknown_key = 1\n")).unwrap();
    assert_eq!(orbkoop(d, &["--config", "bad.toml", "gen-data"]).status.code(), Some(2));
    assert_eq!(orbkoop(d, &["--preset", "no-such-preset", "gen-data"]).status.code(), Some(2));
    assert_eq!(orbkoop(d, &["--config", "missing.toml", "gen-data"]).status.code(), Some(3));
    assert_eq!(
        orbkoop(d, &["--config", "run.toml", "train", "--data", "nowhere"]).status.code(),
        Some(3)
    );
    fs::write(d.join("junk.json"), "{\"format\": \"orbkoop-koopman-model\", \"version\": 1, \"mod").unwrap();
    assert_eq!(
        orbkoop(d, &["--config", "run.toml", "predict", "--model", "junk.json"]).status.code(),
        Some(3)
    );
}

#[test]
fn mismatched_dataset_and_scenario_are_rejected() {
    let dir = setup();
    let d = dir.path();
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "ds", "gen-data"]));
    let other = SMALL.replace("alpha = 5", "alpha = 6");
    fs::write(d.join("other.toml"), other).unwrap();
    let out = orbkoop(d, &["--config", "other.toml", "train", "--data", "ds"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    ok(&orbkoop(d, &["--config", "run.toml", "--out", "m.json", "train", "--data", "ds", "--epochs", "2"]));
    let out = orbkoop(d, &["--config", "run.toml", "predict", "--model", "m.json", "--scenario", "l1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unit-system"));
}

#[test]
fn zero_steps_gives_a_single_row() {
    let dir = setup();
    let d = dir.path();
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "ds", "gen-data"]));
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "m.json", "train", "--data", "ds", "--epochs", "1"]));
    ok(&orbkoop(d, &["--config", "run.toml", "--out", "p.csv", "predict", "--model", "m.json", "--steps", "0"]));
    assert_eq!(fs::read_to_string(d.join("p.csv")).unwrap().lines().count(), 2);
}

#[test]
fn presets_are_listed() {
    let dir = setup();
    let out = orbkoop(dir.path(), &["presets"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["earth-1p", "earth-10p", "moon", "jupiter", "perturbed", "eccentric-e1", "eccentric-e2", "eccentric-e5", "cr3bp-l1"] {
        assert!(text.contains(name), "{name}");
    }
}
