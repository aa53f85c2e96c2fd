use std::path::Path;
use std::process::{Command, Output};

use comest_cli as cli;
use comest_core::bnn::PosteriorSamples;
use comest_core::config::RunConfig;
use serde_json::json;

fn comest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comest"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

/// Tiny models so the whole chain runs in seconds.
const FAST: &str = r#"
grid_resolution = 5
[dataset]
grasps = 3
orientations_per_grasp = 4
[bnn]
hidden_sizes = [4]
[bnn.pretrain]
epochs = 5
[bnn.nuts]
n_samples = 4
n_warmup = 4
max_tree_depth = 4
[active]
hidden_sizes = [4]
[active.train]
epochs = 5
"#;

#[test]
fn print_default_is_a_valid_documented_config() {
    let out = comest(&["config", "print-default"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with('#')).count() > 20);
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}

#[test]
fn simulate_default_writes_2050_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = comest(&["--out", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote 2050 records"));
    let lines = std::fs::read_to_string(dir.path().join(cli::DATASET_FILE)).unwrap().lines().count();
    assert_eq!(lines, 2051, "header plus records");
}

#[test]
fn invalid_mass_range_exits_with_config_code_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nmass_min_kg = 0.6\nmass_max_kg = 0.2\n");
    let out = comest(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.mass_"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = [\n");
    let out = comest(&["--config", &cfg, "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(comest(&["--out", d, "train-bnn"]).status.code(), Some(3));
    assert_eq!(comest(&["--config", "/nonexistent/cfg.toml", "simulate"]).status.code(), Some(3));
    assert_eq!(comest(&["--out", d, "eval"]).status.code(), Some(3));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cli::load_config(None, Some(99)).unwrap();
    assert_eq!(cfg.seed, 99);
    let (_, ds) = cli::simulate(&cfg, dir.path()).unwrap();
    assert_eq!(ds.header.seed, 99);
}

#[test]
fn full_chain_reports_rows_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg_path = write_config(dir.path(), FAST);
    for cmd in ["simulate", "train-bnn", "train-active", "eval", "ood-study"] {
        let out = comest(&["--config", &cfg_path, "--out", d, cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cfg = cli::load_config(Some(Path::new(&cfg_path)), None).unwrap();
    // 4 methods × 20 scenes × 5 episodes.
    let csv = std::fs::read_to_string(dir.path().join(cli::EVAL_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 400);
    let summary = std::fs::read_to_string(dir.path().join(cli::EVAL_SUMMARY)).unwrap();
    assert!(summary.contains(&cfg.hash()));
    assert!(summary.contains(&format!("seed: {}", cfg.seed)));
    assert!(summary.contains("14.7 mm"));
    let ood = std::fs::read_to_string(dir.path().join(cli::OOD_SUMMARY)).unwrap();
    for row in ["43.4 (OOD)", "244.6", "446.2", "648.1 (OOD)"] {
        assert!(ood.contains(row), "missing mass row {row}");
    }
    let model = PosteriorSamples::load(&dir.path().join(cli::BNN_FILE)).unwrap();
    assert_eq!(model.provenance.config_hash, cfg.hash());
    assert_eq!(model.provenance.seed, cfg.seed);
}

#[test]
fn single_mass_study_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg_path = write_config(dir.path(), &format!("{FAST}\n[ood]\nmasses_kg = [0.3]\nepisodes_per_offset = 1\n"));
    for cmd in ["simulate", "train-bnn", "train-active", "ood-study"] {
        assert!(comest(&["--config", &cfg_path, "--out", d, cmd]).status.success(), "{cmd}");
    }
    let csv = std::fs::read_to_string(dir.path().join(cli::OOD_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn full_scale_hyperparameters_are_echoed_in_model_metadata() {
    // Full-size networks and optimizer settings, on a tiny dataset and a short chain.
    let mut cfg = RunConfig::full_scale();
    cfg.validate().unwrap();
    cfg.dataset.grasps = 2;
    cfg.dataset.orientations_per_grasp = 2;
    cfg.dataset.noise.slip_enabled = false;
    cfg.bnn.nuts.n_samples = 2;
    cfg.bnn.nuts.n_warmup = 2;
    cfg.bnn.nuts.max_tree_depth = 2;
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = cli::simulate(&cfg, dir.path()).unwrap();
    let (_, model) = cli::train_bnn(&cfg, &ds, dir.path()).unwrap();
    assert_eq!(model.architecture.hidden_sizes, vec![256, 128, 64]);
    let echoed = &model.provenance.config["bnn"];
    assert_eq!(echoed["hidden_sizes"], json!([256, 128, 64]));
    assert_eq!(echoed["pretrain"]["epochs"], 500);
    assert_eq!(echoed["pretrain"]["learning_rate"], 0.001);
    assert_eq!(echoed["prior_std"], 0.5);
    assert_eq!(model.provenance.config["active"]["hidden_sizes"], json!([1024, 1024, 512, 64]));
}

