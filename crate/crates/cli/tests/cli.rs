use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use superrad::config::Config;

const SHORT: &str = r#"
name = "short"
[atoms]
b_field_gauss = 0.94300943
occupied_mf = [4.5, -4.5]
n_total = 1.8e5
[[stages]]
kind = "drive"
duration_s = 1.1e-3
omega_m = 1e4
detect = false
[[stages]]
kind = "emit"
duration_s = 0.02
[grid]
seed = 5
"#;

fn superrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superrad"))
        .args(args)
        .env_remove("SUPERRAD_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = superrad(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--binary"]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for file in ["trajectory.csv", "trajectory.bin", "summary.json"] {
        assert_eq!(fs::read(runs[0].join(file)).unwrap(), fs::read(runs[1].join(file)).unwrap(), "{file}");
    }

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(runs[0].join("summary.json")).unwrap()).unwrap();
    let expected = Config::from_toml_str(SHORT).unwrap().resolve().unwrap().hash;
    assert_eq!(summary["config_hash"], expected.as_str());
    assert_eq!(expected.len(), 64);
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["results"]["seed"], 5);

    // The stored record analyzes to the same spectrum.
    let stored = dir.path().join("stored");
    let bin = runs[0].join("trajectory.bin");
    let o = superrad(&[
        "spectrum",
        "--config",
        &cfg,
        "--record",
        bin.to_str().unwrap(),
        "--out",
        stored.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let peaks: serde_json::Value = serde_json::from_slice(&fs::read(stored.join("peaks.json")).unwrap()).unwrap();
    assert_eq!(peaks, summary["results"]["spectrum"]);
}

#[test]
fn seed_override_changes_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(superrad(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(superrad(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "6"]).status.success());
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        SHORT.replace("n_total = 1.8e5", "n_total = -1.0"),
        SHORT.replace("[grid]", "[grid]\ndt_s = 1e-4"),
        SHORT.replace("name = \"short\"", "name = \"short\"\ncolour = 1"),
        SHORT.replace("[4.5, -4.5]", "[4.5, 4.5]"),
    ];
    for text in &cases {
        let cfg = write_config(dir.path(), text);
        let o = superrad(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
        assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
    }
    let o = superrad(&["simulate", "--preset", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(superrad(&["--dump-preset", "nope"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &SHORT.replace("n_total = 1.8e5", "n_total = 1e15"));
    let o = superrad(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("divergence_snapshot.json").exists());
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn dumped_presets_parse_back() {
    for name in superrad::config::PRESET_NAMES {
        let o = superrad(&["--dump-preset", name]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), Config::preset(name).unwrap());
    }
}

#[test]
fn oracle_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = superrad(&["oracle", "--preset", "fig3_two_ensembles", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "oracle");
}
