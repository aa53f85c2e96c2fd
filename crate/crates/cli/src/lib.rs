//! Commands behind the `comest` binary. Each one reads its inputs, runs one
//! pipeline stage and writes its artifacts atomically under the output directory.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use comest_core::active::{self, ActiveNetModel};
use comest_core::bnn::{self, PosteriorSamples};
use comest_core::config::RunConfig;
use comest_core::persist;
use comest_core::pipeline::{self, EvalContext, EvalReport, OodReport};
use comest_core::sim::{self, Dataset};
use comest_core::{Error, Result};
use nalgebra::Vector3;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const BNN_FILE: &str = "bnn.json";
pub const ACTIVENET_FILE: &str = "activenet.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_SUMMARY: &str = "eval_summary.txt";
pub const OOD_CSV: &str = "ood.csv";
pub const OOD_SUMMARY: &str = "ood_summary.txt";

#[derive(Debug, Parser)]
#[command(name = "comest", version, about = "Center-of-mass estimation with active wrist re-orientation")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the simulated training dataset.
    Simulate,
    /// Pretrain the regressor and draw its posterior with NUTS.
    TrainBnn {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Label actions with the trained regressor and fit the action scorer.
    TrainActive {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bnn: Option<PathBuf>,
    },
    /// Compare the methods on held-out scenes.
    Eval {
        #[arg(long)]
        bnn: Option<PathBuf>,
        #[arg(long)]
        activenet: Option<PathBuf>,
    },
    /// Sweep object mass at fixed grasp offsets.
    OodStudy {
        #[arg(long)]
        bnn: Option<PathBuf>,
        #[arg(long)]
        activenet: Option<PathBuf>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the default configuration with every key documented.
    PrintDefault,
}

/// Stable process exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Domain(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 4,
    }
}

/// Loads the config file (or defaults), applies the seed override and validates.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn or_default(p: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.unwrap_or_else(|| out.join(name))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, Dataset)> {
    ensure_dir(out)?;
    let ds = sim::generate_dataset(&cfg.dataset, cfg.seed)?;
    let path = out.join(DATASET_FILE);
    sim::write_dataset(&path, &ds)?;
    Ok((path, ds))
}

fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let ds = sim::read_dataset(path)?;
    if ds.header.config != cfg.dataset || ds.header.seed != cfg.seed {
        log::warn!("{} was produced by a different dataset config or seed", path.display());
    }
    Ok(ds)
}

pub fn train_bnn(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<(PathBuf, PosteriorSamples)> {
    let ds = load_dataset(cfg, dataset)?;
    ensure_dir(out)?;
    let model = bnn::train_bnn(&ds.records, &cfg.bnn, cfg.seed, cfg.provenance())?;
    let path = out.join(BNN_FILE);
    model.save(&path)?;
    Ok((path, model))
}

pub fn train_active(
    cfg: &RunConfig,
    dataset: &Path,
    bnn_path: &Path,
    out: &Path,
) -> Result<(PathBuf, ActiveNetModel)> {
    let ds = load_dataset(cfg, dataset)?;
    let bnn = PosteriorSamples::load(bnn_path)?;
    let examples = active::make_training_labels(&bnn, &ds, cfg.active.label_target)?;
    ensure_dir(out)?;
    let model = active::train_activenet(&examples, &cfg.active, cfg.seed, cfg.provenance())?;
    let path = out.join(ACTIVENET_FILE);
    model.save(&path)?;
    Ok((path, model))
}

fn with_context<T>(
    cfg: &RunConfig,
    bnn_path: &Path,
    activenet_path: &Path,
    f: impl FnOnce(&EvalContext) -> Result<T>,
) -> Result<T> {
    let bnn = PosteriorSamples::load(bnn_path)?;
    let scorer = ActiveNetModel::load(activenet_path)?;
    let ctx = EvalContext {
        bnn: &bnn,
        scorer: &scorer,
        grid: cfg.grid()?,
        noise: cfg.dataset.noise,
    };
    f(&ctx)
}

pub fn eval(cfg: &RunConfig, bnn_path: &Path, activenet_path: &Path, out: &Path) -> Result<EvalReport> {
    let report = with_context(cfg, bnn_path, activenet_path, |ctx| {
        pipeline::evaluate(
            ctx,
            &cfg.eval.methods,
            &cfg.test_scenes()?,
            cfg.eval.episodes_per_scene,
            cfg.report_meta(),
        )
    })?;
    ensure_dir(out)?;
    persist::write_atomic(&out.join(EVAL_CSV), report.to_csv().as_bytes())?;
    persist::write_atomic(&out.join(EVAL_SUMMARY), report.summary_table().as_bytes())?;
    Ok(report)
}

pub fn ood_study(cfg: &RunConfig, bnn_path: &Path, activenet_path: &Path, out: &Path) -> Result<OodReport> {
    let offsets: Vec<Vector3<f64>> = cfg.ood.offsets_m.iter().map(|o| Vector3::from(*o)).collect();
    let report = with_context(cfg, bnn_path, activenet_path, |ctx| {
        pipeline::ood_study(
            ctx,
            cfg.ood.method,
            &cfg.ood.masses_kg,
            &offsets,
            cfg.ood.episodes_per_offset,
            (cfg.dataset.mass_min_kg, cfg.dataset.mass_max_kg),
            cfg.report_meta(),
        )
    })?;
    ensure_dir(out)?;
    persist::write_atomic(&out.join(OOD_CSV), report.to_csv().as_bytes())?;
    persist::write_atomic(&out.join(OOD_SUMMARY), report.summary_table().as_bytes())?;
    Ok(report)
}

/// Executes one parsed invocation, printing a short report to stdout.
pub fn run(cli: Cli) -> Result<()> {
    if let Command::Config {
        action: ConfigAction::PrintDefault,
    } = cli.command
    {
        print!("{}", RunConfig::annotated_default());
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_path();
    log::info!("seed {}, config {}", cfg.seed, cfg.hash());
    match cli.command {
        Command::Simulate => {
            let (path, ds) = simulate(&cfg, out)?;
            println!("wrote {} records to {}", ds.records.len(), path.display());
        }
        Command::TrainBnn { dataset } => {
            let (path, model) = train_bnn(&cfg, &or_default(dataset, out, DATASET_FILE), out)?;
            let d = &model.diagnostics;
            println!(
                "wrote {} posterior samples to {}\nmean acceptance {:.3}, divergences {}/{}, step size {:.4}, mean tree depth {:.2}",
                model.samples.len(),
                path.display(),
                d.mean_accept,
                d.divergences,
                model.samples.len(),
                d.step_size,
                d.mean_tree_depth
            );
        }
        Command::TrainActive { dataset, bnn } => {
            let (path, model) = train_active(
                &cfg,
                &or_default(dataset, out, DATASET_FILE),
                &or_default(bnn, out, BNN_FILE),
                out,
            )?;
            let s = &model.label_summary;
            println!(
                "wrote scorer to {} ({} labels, mean {:.4} m, final loss {:.5})",
                path.display(),
                s.count,
                s.mean,
                model.final_loss
            );
        }
        Command::Eval { bnn, activenet } => {
            let report = eval(
                &cfg,
                &or_default(bnn, out, BNN_FILE),
                &or_default(activenet, out, ACTIVENET_FILE),
                out,
            )?;
            print!("{}", report.summary_table());
            println!("rows: {} -> {}", report.rows.len(), out.join(EVAL_CSV).display());
        }
        Command::OodStudy { bnn, activenet } => {
            let report = ood_study(
                &cfg,
                &or_default(bnn, out, BNN_FILE),
                &or_default(activenet, out, ACTIVENET_FILE),
                out,
            )?;
            print!("{}", report.summary_table());
        }
        Command::Config { .. } => unreachable!("handled above"),
    }
    Ok(())
}
