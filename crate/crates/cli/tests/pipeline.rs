use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use flowinfer::checkpoint::model_files;
use flowinfer::dataset::{save, Dataset};
use flowinfer::export::{read_export, FLOWS_COLS, NET_COLS, STOCKS_COLS};
use flowinfer::output::Manifest;
use flowinfer_core::synthetic::{corrupt, generate, CorruptionSpec, WorldSpec};

const BIN: &str = env!("CARGO_BIN_EXE_flowinfer");

const CONFIG: &str = r#"{
  "seed": 5,
  "data": "world",
  "model": "model",
  "world": {"countries": 4, "years": 6},
  "network": {"latent_dim": 2, "hidden_width": 8, "depth": 3},
  "train": {"epochs": 15, "learning_rate": 0.01},
  "ensemble": {"members": 2},
  "estimate": {"samples": 2},
  "elasticity": {"sample": 40},
  "sweep": {"lambdas": [0.5], "latent_dims": [2], "widths": [6]}
}"#;

fn flowinfer(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = flowinfer(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--config", "cfg.json", "--out", "world"]);
    dir
}

fn numeric_outputs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else if p.file_name().unwrap() != "manifest.json" {
            files.push(p);
        }
    }
    files.sort();
    files.into_iter().map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap())).collect()
}

#[test]
fn synth_train_evaluate_emits_metrics() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["train", "--config", "cfg.json", "--out", "model"]);
    ok(d, &["evaluate", "--config", "cfg.json", "--out", "eval"]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval/metrics.json")).unwrap()).unwrap();
    assert!(metrics["median_relative_error"].as_f64().unwrap().is_finite());
    let manifest: Manifest = serde_json::from_slice(&fs::read(d.join("eval/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "evaluate");
    assert!(manifest.inputs.keys().any(|k| k.ends_with("model.ckpt")));
    assert!(manifest.outputs.contains_key("metrics.json"));
    let history = fs::read_to_string(d.join("model/loss_history.csv")).unwrap();
    assert!(history.starts_with("epoch,stock,mu,flow,total\n"));
    assert_eq!(history.lines().count(), 16);
}

#[test]
fn every_command_reruns_byte_identically_from_its_manifest() {
    let ws = workspace();
    let d = ws.path();
    let runs: [(&str, &[&str]); 8] = [
        ("synth", &[]),
        ("train", &[]),
        ("ensemble", &[]),
        ("estimate", &["--model", "ens"]),
        ("elasticity", &[]),
        ("baseline", &[]),
        ("evaluate", &[]),
        ("sweep", &[]),
    ];
    for (cmd, extra) in runs {
        let first = format!("{cmd}_a");
        let mut args = vec![cmd, "--config", "cfg.json", "--out", &first];
        args.extend_from_slice(extra);
        ok(d, &args);
        let manifest = format!("{first}/manifest.json");
        let second = format!("{cmd}_b");
        ok(d, &[cmd, "--config", &manifest, "--out", &second]);
        let (a, b) = (numeric_outputs(&d.join(&first)), numeric_outputs(&d.join(&second)));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{cmd} outputs differ on rerun");
        if cmd == "train" {
            fs::rename(d.join(&first), d.join("model")).unwrap();
        }
        if cmd == "ensemble" {
            fs::rename(d.join(&first), d.join("ens")).unwrap();
        }
    }
}

#[test]
fn failures_exit_nonzero_without_outputs() {
    let ws = workspace();
    let d = ws.path();
    let out = flowinfer(d, &["train", "--data", "nowhere", "--out", "t"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!d.join("t").exists());
    let out = flowinfer(d, &["estimate", "--config", "cfg.json", "--model", "missing", "--out", "e"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!d.join("e").exists());
    fs::write(d.join("bad.json"), r#"{"trian": {}}"#).unwrap();
    let out = flowinfer(d, &["train", "--config", "bad.json", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trian"));
    let out = flowinfer(d, &["train", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duplicate_rows_name_their_line() {
    let ws = workspace();
    let d = ws.path();
    let path = d.join("world/targets_net.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    let second = text.lines().nth(1).unwrap().to_string();
    text.push_str(&second);
    text.push('\n');
    let dup_line = text.lines().count();
    fs::write(&path, text).unwrap();
    let err = Dataset::load(&d.join("world")).unwrap_err().to_string();
    assert!(err.contains(&format!("targets_net.csv:{dup_line}")), "{err}");
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn schema_and_code_errors_are_reported() {
    let ws = workspace();
    let world = ws.path().join("world");
    let path = world.join("targets_flows.csv");
    let original = fs::read_to_string(&path).unwrap();
    fs::write(&path, original.replacen("year,origin", "yr,origin", 1)).unwrap();
    assert!(Dataset::load(&world).unwrap_err().to_string().contains("expected columns"));
    let mut lines: Vec<String> = original.lines().map(str::to_string).collect();
    lines[1] = lines[1].replacen("C00", "XX", 1);
    fs::write(&path, lines.join("\n")).unwrap();
    let err = Dataset::load(&world).unwrap_err().to_string();
    assert!(err.contains("unknown country code") && err.contains(":2"), "{err}");
}

#[test]
fn empty_covariate_file_marks_it_absent() {
    let ws = workspace();
    let world = ws.path().join("world");
    fs::write(world.join("covariates/trade.csv"), "").unwrap();
    let ds = Dataset::load(&world).unwrap();
    assert!(ds.covariates.get("trade").unwrap().values().iter().all(|v| v.is_nan()));
    let err = ds.panel().unwrap_err().to_string();
    assert!(err.contains("trade"), "{err}");
    fs::remove_file(world.join("covariates/trade.csv")).unwrap();
    let ds = Dataset::load(&world).unwrap();
    assert!(ds.covariates.get("trade").is_none());
}

#[test]
fn generated_world_round_trips_through_files() {
    let spec = WorldSpec { countries: 5, years: 4, ..WorldSpec::default() };
    let world = generate(&spec, 3).unwrap();
    let obs = corrupt(&world, &CorruptionSpec { seed: 4, ..CorruptionSpec::default() }).unwrap();
    let ds = Dataset::from_world(&world, &obs);
    let dir = tempfile::tempdir().unwrap();
    save(&ds, dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn exports_reload_and_zero_variance_has_zero_std() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["train", "--config", "cfg.json", "--out", "model"]);
    let cfg = CONFIG.replacen(r#""estimate": {"samples": 2}"#, r#""estimate": {"samples": 3, "stock_uncertainty": false}"#, 1);
    fs::write(d.join("fixed.json"), cfg).unwrap();
    ok(d, &["estimate", "--config", "fixed.json", "--out", "est"]);
    for (file, cols) in [("flows.csv", &FLOWS_COLS[..]), ("stocks.csv", &STOCKS_COLS[..]), ("net.csv", &NET_COLS[..])] {
        let text = fs::read_to_string(d.join("est").join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), cols.join(","));
        let rows = read_export(&d.join("est").join(file), cols).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.std == 0.0), "{file}");
    }
    assert_eq!(model_files(&d.join("model")).unwrap().len(), 1);
}
